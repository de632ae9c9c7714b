//! Review node: failure traceback to a structured repair plan.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::analysis::SymbolTable;
use crate::gateway::{Gateway, PurposeTag};
use crate::generator::templates::BUNDLE_FILES;
use crate::generator::{check_steps, RepairPlan, ServiceBundle};

use super::{numbered, RunOutcome, VerifyError};

const REVIEW_SYSTEM: &str = "You review a failing test run of a generated MCP service. First \
find the root cause from the traceback, the failing tests, the generated files and the \
repository structure. Then give a repair plan of line edits to the generated files only; the \
repository source cannot be changed. Line numbers are 1-based and inclusive, spans in one file \
must not overlap, and every step needs an explanation. Answer with JSON {\"root_cause\", \
\"steps\": [{\"file\", \"start_line\", \"end_line\", \"replacement\", \"explanation\"}]}.";

const SOURCE_BUDGET: usize = 12_000;

/// Source files the traceback names as `<source>/path.py`.
fn traceback_sources(traceback: &str) -> BTreeSet<String> {
    static SOURCE: OnceLock<Regex> = OnceLock::new();
    let re = SOURCE.get_or_init(|| Regex::new(r"<source>/([\w./-]+\.py)").expect("valid regex"));
    re.captures_iter(traceback).map(|c| c[1].to_string()).collect()
}

pub fn review_prompt(outcome: &RunOutcome, bundle: &ServiceBundle, table: &SymbolTable, source_dir: &Path) -> String {
    let traceback = outcome.traceback.as_deref().unwrap_or_default();
    let mut out = format!(
        "Tests run: {}, passed: {}\nFailing tests: {}\n\nTraceback:\n{traceback}\n",
        outcome.tests_run,
        outcome.tests_passed,
        outcome.failing_tests().join(", ")
    );
    for file in BUNDLE_FILES {
        if let Some(text) = bundle.file(file) {
            out.push_str(&format!("\n{file}:\n{}", numbered(text)));
        }
    }
    let mut budget = SOURCE_BUDGET;
    for rel in traceback_sources(traceback) {
        // Only files inside the clone; the regex already excludes `..`-free
        // escapes but a joined path is still checked.
        if rel.split('/').any(|c| c == "..") {
            continue;
        }
        let Ok(text) = std::fs::read_to_string(source_dir.join(&rel)) else { continue };
        let excerpt: String = text.chars().take(budget).collect();
        budget = budget.saturating_sub(excerpt.len());
        out.push_str(&format!("\nRepository file {rel}:\n{}", numbered(&excerpt)));
        if budget == 0 {
            break;
        }
    }
    out.push_str(&format!("\nRepository structure:\n{}", table.digest()));
    out
}

/// Every step names a bundle file and stays inside its lines.
pub fn validate_plan_spans(plan: &RepairPlan, bundle: &ServiceBundle) -> Result<(), VerifyError> {
    check_steps(&plan.steps).map_err(VerifyError::PlanOutOfRange)?;
    for step in &plan.steps {
        let Some(text) = bundle.file(&step.file) else {
            return Err(VerifyError::PlanOutOfRange(format!("`{}` is not a bundle file", step.file)));
        };
        let lines = text.lines().count();
        if step.end_line > lines {
            return Err(VerifyError::PlanOutOfRange(format!(
                "{}:{}-{} but the file has {lines} lines",
                step.file, step.start_line, step.end_line
            )));
        }
    }
    Ok(())
}

pub fn review_failure(
    gateway: &Gateway,
    outcome: &RunOutcome,
    bundle: &ServiceBundle,
    table: &SymbolTable,
    source_dir: &Path,
) -> Result<RepairPlan, VerifyError> {
    if outcome.passed() || outcome.traceback.is_none() {
        return Err(VerifyError::Precondition("review needs a failed run with a traceback".into()));
    }
    let plan: RepairPlan = gateway.ask(
        PurposeTag::FailureReview,
        REVIEW_SYSTEM,
        &review_prompt(outcome, bundle, table, source_dir),
    )?;
    validate_plan_spans(&plan, bundle)?;
    Ok(plan)
}
