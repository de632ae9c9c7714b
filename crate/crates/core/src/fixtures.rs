//! Fixture support: fixture directories materialized as git repositories
//! with a stable commit id, and hand-authored case scripts turned into
//! scripted model replies for recording transcripts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::CodeReportDraft;
use crate::gateway::{PromptRequest, PurposeTag, Reply, ScriptedBackend};
use crate::generator::BundleDraft;
use crate::process::Sandboxed;
use crate::runtime::InvocationPlan;

const FIXED_DATE: &str = "2024-01-01T00:00:00+00:00";

/// Copy `fixture` to `dest` and commit it with a fixed author and date, so
/// the same fixture always yields the same commit id. Returns `dest`.
pub fn materialize_repo(fixture: &Path, dest: &Path) -> std::io::Result<PathBuf> {
    if dest.exists() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} already exists", dest.display()),
        ));
    }
    for entry in walkdir::WalkDir::new(fixture).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(fixture).map_err(std::io::Error::other)?;
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    let git = |args: &[&str]| -> std::io::Result<()> {
        let out = Sandboxed::new("git")
            .args(["-c", "user.name=fixture", "-c", "user.email=fixture@localhost", "-c", "commit.gpgsign=false"])
            .args(args.iter().copied())
            .cwd(dest)
            .env("HOME", dest.display().to_string())
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .env("GIT_AUTHOR_DATE", FIXED_DATE)
            .env("GIT_COMMITTER_DATE", FIXED_DATE)
            .run()?;
        if out.success() {
            Ok(())
        } else {
            Err(std::io::Error::other(format!("git {}: {}", args.join(" "), out.combined().trim())))
        }
    };
    git(&["init", "-q", "-b", "main"])?;
    git(&["add", "-A"])?;
    git(&["commit", "-q", "-m", "fixture"])?;
    Ok(dest.to_path_buf())
}

/// One targeted edit, located by text instead of line numbers: the first
/// line of `file` containing `find` has that text replaced by `replace`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEdit {
    pub file: String,
    pub find: String,
    pub replace: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRepair {
    pub root_cause: String,
    #[serde(default)]
    pub edits: Vec<ScriptEdit>,
    #[serde(default)]
    pub drop_endpoints: Vec<String>,
}

/// What the model answers for one case, in call order per purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_report: Option<CodeReportDraft>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleDraft>,
    #[serde(default)]
    pub import_repairs: Vec<ScriptRepair>,
    #[serde(default)]
    pub reviews: Vec<ScriptRepair>,
    #[serde(default)]
    pub plans: Vec<InvocationPlan>,
}

impl CaseScript {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::other(format!("{}: {e}", path.display())))
    }

    pub fn backend(&self) -> Arc<ScriptedBackend> {
        let backend = ScriptedBackend::new();
        if let Some(report) = &self.code_report {
            backend.push(PurposeTag::CodeReport, Reply::json(&json!(report)));
        }
        if let Some(bundle) = &self.bundle {
            backend.push(PurposeTag::BundleGeneration, Reply::json(&json!(bundle)));
        }
        for repair in &self.import_repairs {
            let repair = repair.clone();
            backend.push(
                PurposeTag::ImportRepair,
                Reply::computed(move |req| repair_reply(&repair, req, true)),
            );
        }
        for review in &self.reviews {
            let review = review.clone();
            backend.push(
                PurposeTag::FailureReview,
                Reply::computed(move |req| repair_reply(&review, req, false)),
            );
        }
        for plan in &self.plans {
            backend.push(PurposeTag::Planning, Reply::json(&json!(plan)));
        }
        Arc::new(backend)
    }
}

/// Lines of the numbered listing of `file` inside a prompt.
pub fn listing<'a>(prompt: &'a str, file: &str) -> Option<Vec<(usize, &'a str)>> {
    let header = format!("\n{file}:\n");
    let start = prompt.find(&header)? + header.len();
    let mut out = Vec::new();
    for line in prompt[start..].lines() {
        let Some((number, text)) = line.split_once(" | ") else { break };
        let Ok(number) = number.trim().parse::<usize>() else { break };
        out.push((number, text));
    }
    Some(out)
}

fn repair_reply(repair: &ScriptRepair, req: &PromptRequest, with_drops: bool) -> Result<String, String> {
    let mut steps = Vec::new();
    for edit in &repair.edits {
        let lines = listing(&req.user_text, &edit.file).ok_or_else(|| format!("{} is not in the prompt", edit.file))?;
        let (number, text) = lines
            .iter()
            .find(|(_, text)| text.contains(&edit.find))
            .ok_or_else(|| format!("`{}` not found in {}", edit.find, edit.file))?;
        steps.push(json!({
            "file": edit.file,
            "start_line": number,
            "end_line": number,
            "replacement": text.replacen(&edit.find, &edit.replace, 1),
            "explanation": edit.explanation,
        }));
    }
    let mut reply = json!({"root_cause": repair.root_cause, "steps": steps});
    if with_drops {
        reply["drop_endpoints"] = Value::from(repair.drop_endpoints.clone());
    }
    Ok(reply.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn materialized_commit_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = dir.path().join("fixture");
        std::fs::create_dir_all(fixture.join("pkg")).unwrap();
        std::fs::write(fixture.join("pkg/__init__.py"), "def f():\n    return 1\n").unwrap();
        let head = |d: &Path| {
            Sandboxed::new("git").args(["rev-parse", "HEAD"]).cwd(d).run().unwrap().stdout.trim().to_string()
        };
        let a = materialize_repo(&fixture, &dir.path().join("a")).unwrap();
        let b = materialize_repo(&fixture, &dir.path().join("b")).unwrap();
        assert_eq!(head(&a), head(&b));
        assert!(materialize_repo(&fixture, &a).is_err());
    }

    #[test]
    fn edits_are_located_in_the_listing() {
        let prompt = "Failing tests\n\nadapter.py:\n   1 | import x\n   2 | y = call(a=1)\n\ntest_adapter.py:\n   1 | y = call(a=1)\n";
        let repair = ScriptRepair {
            root_cause: "wrong keyword".into(),
            edits: vec![ScriptEdit {
                file: "adapter.py".into(),
                find: "a=1".into(),
                replace: "b=1".into(),
                explanation: "rename".into(),
            }],
            drop_endpoints: vec![],
        };
        let req = PromptRequest::new(PurposeTag::FailureReview, "repair-plan/v1", "s", prompt);
        let reply: Value = serde_json::from_str(&repair_reply(&repair, &req, false).unwrap()).unwrap();
        assert_eq!(reply["steps"][0]["start_line"], 2);
        assert_eq!(reply["steps"][0]["replacement"], "y = call(b=1)");
        assert!(reply.get("drop_endpoints").is_none());
    }
}
