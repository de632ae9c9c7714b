//! Environment provisioning: runtime lookup, isolated venv, package install
//! and an importability check.

mod declared;

pub use declared::{
    container_packages, extract_dependencies, major_minor, read_requirements, requirement_name,
    resolve_runtime, EnvironmentSpec, SourceOfTruth, DEFAULT_RUNTIME,
};

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::process::Sandboxed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum PackageIndex {
    /// The installer's default index.
    Default,
    Url(String),
    /// Offline: only wheels found in these directories.
    Local(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Directories searched for `pythonX.Y`; empty means `PATH`.
    pub runtime_search_paths: Vec<PathBuf>,
    pub index: PackageIndex,
    pub install_timeout: Duration,
    /// Shared package cache; defaults to `<workspace-root>/.cache/pip`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            runtime_search_paths: Vec::new(),
            index: PackageIndex::Default,
            install_timeout: Duration::from_secs(300),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvStatus {
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentHandle {
    pub env_path: PathBuf,
    pub python: PathBuf,
    pub spec: EnvironmentSpec,
    pub install_log: String,
    pub status: EnvStatus,
    /// Distributions installed into the environment itself, sorted.
    #[serde(default)]
    pub installed: Vec<String>,
}

impl EnvironmentHandle {
    pub fn is_ready(&self) -> bool {
        self.status == EnvStatus::Ready
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("python {0} is not available on this host")]
    RuntimeUnavailable(String),
    #[error("package installation failed: {excerpt}")]
    InstallFailed {
        excerpt: String,
        handle: Box<EnvironmentHandle>,
    },
    #[error("environment error: {0}")]
    Io(String),
}

impl EnvError {
    pub fn handle(&self) -> Option<&EnvironmentHandle> {
        match self {
            EnvError::InstallFailed { handle, .. } => Some(handle),
            _ => None,
        }
    }
}

/// Interpreter for `major.minor`, looked up as `pythonX.Y`.
pub fn find_runtime(version: &str, config: &EnvConfig) -> Option<PathBuf> {
    let name = format!("python{version}");
    if config.runtime_search_paths.is_empty() {
        return crate::process::which(&name);
    }
    config
        .runtime_search_paths
        .iter()
        .map(|dir| dir.join(&name))
        .find(|p| p.is_file())
}

/// Create `<env_dir>` as a venv and install the spec's packages into it.
pub fn provision_environment(
    spec: &EnvironmentSpec,
    env_dir: &Path,
    config: &EnvConfig,
) -> Result<EnvironmentHandle, EnvError> {
    let base = find_runtime(&spec.runtime_version, config)
        .ok_or_else(|| EnvError::RuntimeUnavailable(spec.runtime_version.clone()))?;
    std::fs::create_dir_all(env_dir).map_err(|e| EnvError::Io(e.to_string()))?;
    let env_dir = env_dir.canonicalize().map_err(|e| EnvError::Io(e.to_string()))?;
    let cache = config
        .cache_dir
        .clone()
        .unwrap_or_else(|| env_dir.parent().and_then(Path::parent).unwrap_or(&env_dir).join(".cache/pip"));
    let tmp = env_dir.join("tmp");
    for dir in [&cache, &tmp] {
        std::fs::create_dir_all(dir).map_err(|e| EnvError::Io(e.to_string()))?;
    }

    let mut log = String::new();
    // pytest and pip come from the base interpreter's site-packages.
    let venv = Sandboxed::new(&base)
        .args(["-m", "venv", "--without-pip", "--system-site-packages"])
        .arg(env_dir.display().to_string())
        .timeout(Duration::from_secs(120))
        .run()
        .map_err(|e| EnvError::Io(e.to_string()))?;
    log.push_str(&format!("$ {} -m venv {}\n{}", base.display(), env_dir.display(), venv.combined()));
    let python = env_dir.join("bin").join("python");
    let mut handle = EnvironmentHandle {
        env_path: env_dir.clone(),
        python: python.clone(),
        spec: spec.clone(),
        install_log: String::new(),
        status: EnvStatus::Failed,
        installed: Vec::new(),
    };
    if !venv.success() {
        return Err(fail(handle, log, "venv creation failed", &env_dir));
    }

    if !spec.packages.is_empty() {
        let lock = env_dir.join("requirements.lock.txt");
        std::fs::write(&lock, spec.packages.join("\n") + "\n").map_err(|e| EnvError::Io(e.to_string()))?;
        let mut pip = Sandboxed::new(&python)
            .args(["-m", "pip", "install", "--disable-pip-version-check", "--no-input"])
            .args(["--progress-bar", "off", "-r"])
            .arg(lock.display().to_string())
            .env("PIP_CACHE_DIR", cache.display().to_string())
            .env("PIP_CONFIG_FILE", "/dev/null")
            .env("PIP_NO_WARN_SCRIPT_LOCATION", "1")
            .env("TMPDIR", tmp.display().to_string())
            .env("HOME", tmp.display().to_string())
            .cwd(&env_dir)
            .timeout(config.install_timeout);
        match &config.index {
            PackageIndex::Default => {}
            PackageIndex::Url(url) => pip = pip.args(["--index-url", url.as_str()]),
            PackageIndex::Local(dirs) => {
                pip = pip.arg("--no-index");
                for dir in dirs {
                    pip = pip.arg("--find-links").arg(dir.display().to_string());
                }
            }
        }
        let out = pip.run().map_err(|e| EnvError::Io(e.to_string()))?;
        log.push_str(&format!("$ {} {}\n{}", python.display(), pip.argv().join(" "), out.combined()));
        if out.timed_out {
            log.push_str(&format!("install timed out after {:?}\n", config.install_timeout));
        }
        if !out.success() {
            return Err(fail(handle, log, "installer exited with an error", &env_dir));
        }
    }

    let check = importability_check(&python, &spec.packages, &env_dir)?;
    log.push_str(&check.log);
    handle.installed = check.installed;
    if !check.failures.is_empty() {
        let reason = format!("not importable: {}", check.failures.join(", "));
        return Err(fail(handle, log, &reason, &env_dir));
    }
    handle.status = EnvStatus::Ready;
    handle.install_log = log;
    write_log(&env_dir, &handle.install_log);
    Ok(handle)
}

fn fail(mut handle: EnvironmentHandle, log: String, reason: &str, env_dir: &Path) -> EnvError {
    handle.status = EnvStatus::Failed;
    handle.install_log = format!("{log}\n{reason}\n");
    write_log(env_dir, &handle.install_log);
    EnvError::InstallFailed {
        excerpt: log_excerpt(&handle.install_log, reason),
        handle: Box::new(handle),
    }
}

fn write_log(env_dir: &Path, log: &str) {
    let _ = std::fs::write(env_dir.join("install_log.txt"), log);
}

/// The reason plus the last error-looking lines of the log.
fn log_excerpt(log: &str, reason: &str) -> String {
    let errors: Vec<&str> = log
        .lines()
        .filter(|l| l.contains("ERROR") || l.contains("error:") || l.contains("No matching distribution"))
        .collect();
    let tail = if errors.is_empty() {
        log.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>()
    } else {
        errors.into_iter().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect()
    };
    format!("{reason}: {}", tail.join(" | "))
}

struct CheckResult {
    installed: Vec<String>,
    failures: Vec<String>,
    log: String,
}

const IMPORT_CHECK: &str = r#"
import importlib, importlib.metadata as md, json, re, sys, sysconfig
site = sysconfig.get_paths()["purelib"]
def norm(n): return re.sub(r"[-_.]+", "-", n).lower()
def tops(dist):
    text = dist.read_text("top_level.txt")
    if text:
        return [t for t in text.split() if t]
    names = set()
    for f in dist.files or []:
        first = f.parts[0]
        if first.endswith((".dist-info", ".egg-info", ".data")) or first in ("..", "__pycache__"):
            continue
        if len(f.parts) == 1:
            if first.endswith(".py"):
                names.add(first[:-3])
        else:
            names.add(first)
    return sorted(names)
installed = sorted(norm(d.metadata["Name"]) + "==" + d.version for d in md.distributions(path=[site]))
failures = []
for name in json.loads(sys.argv[1]):
    try:
        dist = md.distribution(name)
    except md.PackageNotFoundError:
        failures.append(name + " (not installed)")
        continue
    for top in tops(dist):
        try:
            importlib.import_module(top)
        except Exception as exc:
            failures.append("%s (%s: %s)" % (name, type(exc).__name__, exc))
print(json.dumps({"installed": installed, "failures": failures}))
"#;

fn importability_check(python: &Path, packages: &[String], env_dir: &Path) -> Result<CheckResult, EnvError> {
    let names: Vec<String> = packages.iter().filter_map(|p| requirement_name(p)).collect();
    let out = Sandboxed::new(python)
        .args(["-c", IMPORT_CHECK])
        .arg(serde_json::to_string(&names).expect("names serialize"))
        .cwd(env_dir)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .timeout(Duration::from_secs(120))
        .run()
        .map_err(|e| EnvError::Io(e.to_string()))?;
    #[derive(Deserialize)]
    struct Report {
        installed: Vec<String>,
        failures: Vec<String>,
    }
    let report: Report = out
        .stdout
        .lines()
        .last()
        .and_then(|l| serde_json::from_str(l).ok())
        .ok_or_else(|| EnvError::Io(format!("import check failed: {}", out.combined())))?;
    Ok(CheckResult {
        log: format!("import check: {} package(s), {} failure(s)\n", names.len(), report.failures.len()),
        installed: report.installed,
        failures: report.failures,
    })
}

/// Files recorded by installed distributions that resolve outside the
/// environment, plus log markers of user-level installs.
pub fn audit_install(handle: &EnvironmentHandle) -> Vec<String> {
    let mut violations = Vec::new();
    if handle.install_log.contains("Defaulting to user installation") {
        violations.push("installer fell back to a user-level install".to_string());
    }
    for record in walkdir::WalkDir::new(&handle.env_path)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_name() == "RECORD")
    {
        let Some(site) = record.path().parent().and_then(Path::parent) else { continue };
        let Ok(text) = std::fs::read_to_string(record.path()) else { continue };
        for line in text.lines() {
            let Some(rel) = line.split(',').next().filter(|s| !s.is_empty()) else { continue };
            let resolved = normalize(&site.join(rel));
            if !resolved.starts_with(&handle.env_path) {
                violations.push(resolved.display().to_string());
            }
        }
    }
    violations
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            std::path::Component::ParentDir => {
                out.pop();
            }
            std::path::Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(packages: &[&str], runtime: &str) -> EnvironmentSpec {
        EnvironmentSpec {
            runtime_version: runtime.into(),
            packages: packages.iter().map(|s| s.to_string()).collect(),
            source_of_truth: SourceOfTruth::Default,
            warnings: vec![],
        }
    }

    #[test]
    fn empty_spec_gives_ready_environment() {
        let dir = tempfile::tempdir().unwrap();
        let handle = provision_environment(&spec(&[], DEFAULT_RUNTIME), &dir.path().join("run/env"), &EnvConfig::default()).unwrap();
        assert!(handle.is_ready());
        assert!(handle.python.exists());
        assert!(handle.installed.is_empty());
        assert!(audit_install(&handle).is_empty());
        assert!(dir.path().join("run/env/install_log.txt").exists());
    }

    #[test]
    fn missing_runtime_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = provision_environment(&spec(&[], "2.7"), dir.path(), &EnvConfig {
            runtime_search_paths: vec![dir.path().to_path_buf()],
            ..EnvConfig::default()
        })
        .unwrap_err();
        assert!(matches!(err, EnvError::RuntimeUnavailable(v) if v == "2.7"));
    }

    #[test]
    fn unknown_package_against_local_index_fails() {
        let dir = tempfile::tempdir().unwrap();
        let wheels = dir.path().join("wheels");
        std::fs::create_dir_all(&wheels).unwrap();
        let config = EnvConfig {
            index: PackageIndex::Local(vec![wheels]),
            ..EnvConfig::default()
        };
        let err = provision_environment(&spec(&["no-such-pkg-xyz-000"], DEFAULT_RUNTIME), &dir.path().join("r/env"), &config).unwrap_err();
        let handle = err.handle().unwrap();
        assert_eq!(handle.status, EnvStatus::Failed);
        assert!(handle.install_log.contains("no-such-pkg-xyz-000"));
    }

    #[test]
    fn excerpt_prefers_error_lines() {
        let log = "a\nERROR: No matching distribution found for x\nb\n";
        assert!(log_excerpt(log, "r").contains("No matching distribution"));
    }
}
