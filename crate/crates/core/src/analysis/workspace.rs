use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::process::Sandboxed;

/// A cloned repository plus the per-run directory layout around it:
/// `<root>/source`, `<root>/reports`, `<root>/env`, `<root>/bundle`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryWorkspace {
    pub run_id: String,
    pub root: PathBuf,
    pub source_url: String,
    pub commit_id: String,
    pub readme_text: Option<String>,
}

impl RepositoryWorkspace {
    pub fn source_dir(&self) -> PathBuf {
        self.root.join("source")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn env_dir(&self) -> PathBuf {
        self.root.join("env")
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.root.join("bundle")
    }

    /// Use an already-populated source directory (no clone). For tests and
    /// for re-running later stages on an existing run.
    pub fn adopt(workspace_root: &Path, run_id: &str, source_url: &str) -> Result<Self, AnalysisError> {
        let root = workspace_root.join(run_id);
        let source = root.join("source");
        if !source.is_dir() {
            return Err(AnalysisError::NotARepository(format!(
                "{} has no source directory",
                root.display()
            )));
        }
        let commit_id = head_commit(&source).unwrap_or_default();
        Ok(Self {
            run_id: run_id.to_string(),
            root,
            source_url: source_url.to_string(),
            commit_id,
            readme_text: find_readme(&source),
        })
    }
}

/// Accept http(s)/git/ssh/file URLs and existing local directories.
pub fn normalize_url(raw: &str) -> Result<String, AnalysisError> {
    let raw = raw.trim();
    let local = Path::new(raw);
    if !raw.contains("://") && local.is_dir() {
        let abs = local
            .canonicalize()
            .map_err(|e| AnalysisError::NotARepository(format!("{raw}: {e}")))?;
        return Ok(url::Url::from_directory_path(&abs)
            .map_err(|_| AnalysisError::NotARepository(raw.to_string()))?
            .to_string());
    }
    let parsed = url::Url::parse(raw).map_err(|e| AnalysisError::NotARepository(format!("{raw}: {e}")))?;
    match parsed.scheme() {
        "file" => {}
        "http" | "https" | "git" | "ssh" => {
            if parsed.host_str().is_none_or(str::is_empty) {
                return Err(AnalysisError::NotARepository(format!("{raw}: missing host")));
            }
            if parsed.path().trim_matches('/').is_empty() {
                return Err(AnalysisError::NotARepository(format!("{raw}: missing repository path")));
            }
        }
        other => {
            return Err(AnalysisError::NotARepository(format!("{raw}: unsupported scheme {other}")))
        }
    }
    Ok(parsed.to_string())
}

/// Shallow clone into `<workspace_root>/<run_id>/source`.
pub fn clone_repository(
    url: &str,
    workspace_root: &Path,
    run_id: &str,
) -> Result<RepositoryWorkspace, AnalysisError> {
    let url = normalize_url(url)?;
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
        return Err(AnalysisError::Workspace(format!("invalid run id `{run_id}`")));
    }
    std::fs::create_dir_all(workspace_root).map_err(|e| AnalysisError::Workspace(e.to_string()))?;
    let root = workspace_root.join(run_id);
    if root.exists() {
        return Err(AnalysisError::Workspace(format!(
            "run directory {} already exists",
            root.display()
        )));
    }
    for sub in ["reports", "env", "bundle"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| AnalysisError::Workspace(e.to_string()))?;
    }
    let source = root.join("source");

    let out = git(&root)
        .args(["clone", "--depth", "1", "--quiet", "--", &url])
        .arg(source.display().to_string())
        .run()
        .map_err(|e| AnalysisError::CloneFailed(e.to_string()))?;
    if !out.success() {
        let message = out.stderr.trim().to_string();
        let lower = message.to_lowercase();
        if lower.contains("not a git repository")
            || lower.contains("does not appear to be a git repository")
            || lower.contains("not found")
        {
            return Err(AnalysisError::NotARepository(message));
        }
        return Err(AnalysisError::CloneFailed(message));
    }

    let commit_id = head_commit(&source)?;
    Ok(RepositoryWorkspace {
        run_id: run_id.to_string(),
        root,
        source_url: url,
        commit_id,
        readme_text: find_readme(&source),
    })
}

fn git(home: &Path) -> Sandboxed {
    Sandboxed::new("git")
        .env("GIT_TERMINAL_PROMPT", "0")
        .env("HOME", home.display().to_string())
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .timeout(Duration::from_secs(300))
}

fn head_commit(source: &Path) -> Result<String, AnalysisError> {
    let out = git(source)
        .args(["rev-parse", "HEAD"])
        .cwd(source)
        .run()
        .map_err(|e| AnalysisError::CloneFailed(e.to_string()))?;
    if !out.success() {
        return Err(AnalysisError::CloneFailed(out.stderr.trim().to_string()));
    }
    Ok(out.stdout.trim().to_string())
}

/// Top-level file whose name starts with "readme", any case. Markdown first.
pub fn find_readme(source: &Path) -> Option<String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(source)
        .ok()?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.to_lowercase().starts_with("readme"))
        })
        .collect();
    names.sort_by_key(|p| {
        let lower = p.file_name().unwrap().to_string_lossy().to_lowercase();
        (!lower.ends_with(".md"), lower)
    });
    names
        .first()
        .and_then(|p| std::fs::read(p).ok())
        .map(|bytes| String::from_utf8_lossy(&bytes).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_urls_are_not_repositories() {
        for bad in ["http://", "https://github.com", "ftp://host/repo", "not a url"] {
            assert!(
                matches!(normalize_url(bad), Err(AnalysisError::NotARepository(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn local_directory_becomes_file_url() {
        let dir = tempfile::tempdir().unwrap();
        let url = normalize_url(dir.path().to_str().unwrap()).unwrap();
        assert!(url.starts_with("file:///"));
    }

    #[test]
    fn readme_lookup_is_case_insensitive() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ReadMe.MD"), "hello").unwrap();
        assert_eq!(find_readme(dir.path()).as_deref(), Some("hello"));
        let empty = tempfile::tempdir().unwrap();
        assert_eq!(find_readme(empty.path()), None);
    }
}
