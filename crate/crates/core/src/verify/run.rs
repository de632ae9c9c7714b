//! Run node: the generated pytest suite inside the provisioned environment.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::env::EnvironmentHandle;
use crate::generator::templates::TEST_PY;
use crate::generator::ServiceBundle;
use crate::process::Sandboxed;
use crate::runtime::LaunchSpec;

use super::VerifyError;

pub const TEST_TIMEOUT: Duration = Duration::from_secs(120);
const JUNIT_FILE: &str = ".junit.xml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub tests_run: usize,
    pub tests_passed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traceback: Option<String>,
    pub duration_secs: f64,
    /// Test function name to pass/fail.
    #[serde(default)]
    pub test_results: BTreeMap<String, bool>,
}

impl RunOutcome {
    /// Status derived from the counts, so the invariant holds by construction.
    pub fn from_counts(results: BTreeMap<String, bool>, traceback: Option<String>, duration_secs: f64) -> Self {
        let tests_run = results.len();
        let tests_passed = results.values().filter(|p| **p).count();
        let pass = tests_run >= 1 && tests_passed == tests_run;
        let traceback = if pass {
            None
        } else {
            Some(traceback.unwrap_or_else(|| {
                if tests_run == 0 {
                    "no tests were collected".into()
                } else {
                    "test failures without captured output".into()
                }
            }))
        };
        Self {
            status: if pass { RunStatus::Pass } else { RunStatus::Fail },
            tests_run,
            tests_passed,
            traceback,
            duration_secs,
            test_results: results,
        }
    }

    /// A failure that never reached the test runner.
    pub fn synthetic_failure(reason: String) -> Self {
        Self {
            status: RunStatus::Fail,
            tests_run: 0,
            tests_passed: 0,
            traceback: Some(reason),
            duration_secs: 0.0,
            test_results: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == RunStatus::Pass
    }

    pub fn failing_tests(&self) -> Vec<&str> {
        self.test_results.iter().filter(|(_, p)| !**p).map(|(n, _)| n.as_str()).collect()
    }
}

/// Write the bundle and run its test file with a wall-clock timeout.
pub fn run_tests(
    bundle: &ServiceBundle,
    env: &EnvironmentHandle,
    launch: &LaunchSpec,
    timeout: Duration,
) -> Result<RunOutcome, VerifyError> {
    if !env.is_ready() {
        return Err(VerifyError::EnvNotReady);
    }
    bundle.write_to(&launch.bundle_dir).map_err(|e| VerifyError::Io(e.to_string()))?;
    let junit = launch.bundle_dir.join(JUNIT_FILE);
    let _ = std::fs::remove_file(&junit);
    let mut cmd = Sandboxed::new(&env.python)
        .args(["-m", "pytest", "-q", "-p", "no:cacheprovider", "--tb=short"])
        .arg(format!("--junitxml={}", junit.display()))
        .arg(TEST_PY)
        .cwd(&launch.bundle_dir)
        .timeout(timeout);
    for (k, v) in launch.environment() {
        cmd = cmd.env(k, v);
    }
    let output = cmd.run().map_err(|e| VerifyError::Io(e.to_string()))?;
    let duration = output.duration.as_secs_f64();
    if output.timed_out {
        let _ = std::fs::remove_file(&junit);
        return Ok(RunOutcome::synthetic_failure(format!(
            "TimeoutError: test suite exceeded {}s",
            timeout.as_secs()
        )))
        .map(|mut o| {
            o.duration_secs = duration;
            o
        });
    }
    let xml = std::fs::read_to_string(&junit).unwrap_or_default();
    let _ = std::fs::remove_file(&junit);
    let (results, failures) = parse_junit(&xml);
    let traceback = if failures.is_empty() {
        // pytest itself failed before writing a report.
        (!output.success()).then(|| output.combined())
    } else {
        Some(failures.join("\n"))
    }
    .map(|t| sanitize_traceback(&t, launch, &env.env_path));
    Ok(RunOutcome::from_counts(results, traceback, duration))
}

/// Per-test pass/fail and the failure texts, in report order.
pub fn parse_junit(xml: &str) -> (BTreeMap<String, bool>, Vec<String>) {
    let mut results = BTreeMap::new();
    let mut failures = Vec::new();
    let Ok(doc) = roxmltree::Document::parse(xml) else {
        return (results, failures);
    };
    for case in doc.descendants().filter(|n| n.has_tag_name("testcase")) {
        let name = case.attribute("name").unwrap_or("unknown").to_string();
        let problem = case
            .children()
            .find(|c| c.has_tag_name("failure") || c.has_tag_name("error") || c.has_tag_name("skipped"));
        match problem {
            None => {
                results.insert(name, true);
            }
            Some(node) => {
                let text = node.text().unwrap_or_else(|| node.attribute("message").unwrap_or(""));
                failures.push(format!("{name}:\n{}", text.trim_end()));
                results.insert(name, false);
            }
        }
    }
    (results, failures)
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

/// Replace run-specific paths with placeholders and drop interpreter frames,
/// so the text is identical across machines and runs.
pub fn sanitize_traceback(text: &str, launch: &LaunchSpec, env_dir: &Path) -> String {
    static ADDRESS: OnceLock<Regex> = OnceLock::new();
    static RELATIVE_SOURCE: OnceLock<Regex> = OnceLock::new();
    static PY_FRAME: OnceLock<Regex> = OnceLock::new();
    static PYTEST_FRAME: OnceLock<Regex> = OnceLock::new();

    let mut text = text.to_string();
    for (dir, tag) in [
        (&launch.source_dir, "<source>"),
        (&launch.bundle_dir, "<bundle>"),
        (&env_dir.to_path_buf(), "<env>"),
    ] {
        let canonical = dir.canonicalize().unwrap_or_else(|_| dir.clone());
        for form in [canonical, dir.clone()] {
            let s = form.display().to_string();
            if !s.is_empty() {
                text = text.replace(&s, tag);
            }
        }
    }
    text = regex(&RELATIVE_SOURCE, r"(\.\./)+source/").replace_all(&text, "<source>/").into_owned();
    text = regex(&ADDRESS, r"0x[0-9a-fA-F]{6,}").replace_all(&text, "0x?").into_owned();

    let py_frame = regex(&PY_FRAME, r#"^(E?\s*)File "([^"]+)", line \d+"#);
    let pytest_frame = regex(&PYTEST_FRAME, r"^(\S+\.py):\d+: in ");
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let frame_path = py_frame
            .captures(line)
            .map(|c| c[2].to_string())
            .or_else(|| pytest_frame.captures(line).map(|c| c[1].to_string()));
        if let Some(path) = frame_path {
            if is_foreign(&path) {
                // Skip the frame and its source line.
                i += 2;
                continue;
            }
        }
        out.push(line);
        i += 1;
    }
    out.join("\n")
}

/// Frames outside the bundle and the repository (interpreter, site-packages).
fn is_foreign(path: &str) -> bool {
    if path.starts_with("<source>") || path.starts_with("<bundle>") {
        return false;
    }
    path.starts_with('/') || path.starts_with("<env>") || path.starts_with('<')
}

/// What the classifier needs from a failure text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracebackSummary {
    pub exception: Option<String>,
    pub message: String,
    /// Innermost frame's file, sanitized (`<source>/pkg/m.py`, `<bundle>/adapter.py`).
    pub innermost_file: Option<String>,
}

/// Read the first failure: the last Python traceback block inside it, or
/// pytest's own frames and `E` lines when there is none.
pub fn summarize_traceback(text: &str) -> TracebackSummary {
    static PY_FRAME: OnceLock<Regex> = OnceLock::new();
    static PYTEST_FRAME: OnceLock<Regex> = OnceLock::new();
    static EXC: OnceLock<Regex> = OnceLock::new();
    let py_frame = regex(&PY_FRAME, r#"^\s*File "([^"]+)", line \d+"#);
    let pytest_frame = regex(&PYTEST_FRAME, r"^(\S+\.py):\d+: in ");
    let exc = regex(&EXC, r"^\s*([A-Za-z_][\w.]*)(?::\s?(.*))?$");

    // First failing test only: sections start with `name:` at column 0
    // followed by indented or framed lines; cut at the next such header.
    let stripped: Vec<String> = text
        .lines()
        .map(|l| l.strip_prefix("E   ").or_else(|| l.strip_prefix("E  ")).unwrap_or(l).to_string())
        .collect();
    let first_end = stripped
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, l)| l.ends_with(':') && !l.starts_with(' ') && !l.contains(' ') && l.starts_with("test"))
        .map(|(i, _)| i)
        .unwrap_or(stripped.len());
    let lines = &stripped[..first_end];

    if let Some(start) = lines.iter().rposition(|l| l.trim_end().ends_with("Traceback (most recent call last):")) {
        let mut summary = TracebackSummary::default();
        let mut i = start + 1;
        while i < lines.len() {
            let line = &lines[i];
            if let Some(c) = py_frame.captures(line) {
                summary.innermost_file = Some(c[1].to_string());
                let indent = line.len() - line.trim_start().len();
                let next = lines.get(i + 1);
                i += if next.is_some_and(|n| n.len() - n.trim_start().len() > indent) { 2 } else { 1 };
                continue;
            }
            if !line.trim().is_empty() {
                if let Some(c) = exc.captures(line) {
                    summary.exception = Some(c[1].to_string());
                    summary.message = c.get(2).map(|m| m.as_str().to_string()).unwrap_or_default();
                }
                break;
            }
            i += 1;
        }
        return summary;
    }

    let mut summary = TracebackSummary::default();
    for (raw, line) in text.lines().take(first_end).zip(lines) {
        if let Some(c) = pytest_frame.captures(line) {
            let file = &c[1];
            summary.innermost_file = Some(if file.starts_with('<') {
                file.to_string()
            } else {
                format!("<bundle>/{file}")
            });
        } else if raw.starts_with('E') && summary.exception.is_none() {
            let body = line.trim();
            if body.starts_with("assert ") {
                summary.exception = Some("AssertionError".into());
                summary.message = body.to_string();
            } else if let Some(c) = exc.captures(body) {
                summary.exception = Some(c[1].to_string());
                summary.message = c.get(2).map(|m| m.as_str().to_string()).unwrap_or_default();
            }
        }
    }
    if summary.exception.is_none() {
        // Plain "TimeoutError: ..." style synthetic texts.
        if let Some(c) = lines.first().and_then(|l| exc.captures(l)) {
            if c[1].ends_with("Error") {
                summary.exception = Some(c[1].to_string());
                summary.message = c.get(2).map(|m| m.as_str().to_string()).unwrap_or_default();
            }
        }
    }
    summary
}
