//! Code check, run, review and finish nodes, and the bounded repair loop.

mod review;
mod rrf;
mod run;

pub use review::{review_failure, review_prompt, validate_plan_spans};
pub use rrf::{
    finalize_bundle, live_validate, run_rrf_loop, ConversionRecord, FinalStatus, FinalizedBundle, HttpPullRequestHook,
    LoopInputs, MIN_VALIDATED_ENDPOINTS,
    PullRequestHook, DEFAULT_MAX_ROUNDS,
};
pub use run::{
    parse_junit, run_tests, sanitize_traceback, summarize_traceback, RunOutcome, RunStatus, TracebackSummary,
    TEST_TIMEOUT,
};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::SymbolTable;
use crate::gateway::{Gateway, GatewayError, PurposeTag, StructuredOutput};
use crate::generator::templates::{ADAPTER_PY, SERVICE_PY};
use crate::generator::{apply_steps, check_steps, drop_endpoints, GenerateError, RepairStep, ServiceBundle};
use crate::python::{parse_module, syntax::Stmt};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("environment is not ready")]
    EnvNotReady,
    #[error("repair made no progress ({before} findings before, {after} after)")]
    NoProgress { before: usize, after: usize },
    #[error("plan out of range: {0}")]
    PlanOutOfRange(String),
    #[error("commit failed: {0}")]
    CommitFailed(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("io: {0}")]
    Io(String),
}

/// Modules the bundle itself provides; never checked against the table.
const BUNDLE_MODULES: [&str; 4] = ["adapter", "start_mcp", "mcp_service", "main"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImportBinding {
    pub importing_file: String,
    pub module_path: String,
    /// `None` for `import a.b`.
    pub symbol_name: Option<String>,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    MissingModule,
    MissingSymbol,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValidationFinding {
    pub binding: ImportBinding,
    pub kind: FindingKind,
    pub detail: String,
}

/// Absolute imports in the tool definition files (adapter and service layer).
pub fn extract_bindings(bundle: &ServiceBundle) -> Vec<ImportBinding> {
    let mut out = Vec::new();
    for file in [ADAPTER_PY, SERVICE_PY] {
        let Some(text) = bundle.file(file) else { continue };
        let Ok(parsed) = parse_module(text, file) else { continue };
        let mut stmts = Vec::new();
        crate::python::walk_body(&parsed.body, true, &mut |s| stmts.push(s));
        for stmt in stmts {
            let line = parsed.start_line(stmt);
            match stmt {
                Stmt::Import(imp) => {
                    for alias in &imp.names {
                        out.push(ImportBinding {
                            importing_file: file.into(),
                            module_path: alias.name.to_string(),
                            symbol_name: None,
                            line,
                        });
                    }
                }
                Stmt::ImportFrom(imp) => {
                    let level = imp.level.map(|l| l.to_u32()).unwrap_or(0);
                    let Some(module) = imp.module.as_ref().filter(|_| level == 0) else { continue };
                    for alias in &imp.names {
                        out.push(ImportBinding {
                            importing_file: file.into(),
                            module_path: module.to_string(),
                            symbol_name: Some(alias.name.to_string()),
                            line,
                        });
                    }
                }
                _ => {}
            }
        }
    }
    out.retain(|b| !BUNDLE_MODULES.contains(&b.module_path.split('.').next().unwrap_or("")));
    out.sort();
    out.dedup();
    out
}

/// The import predicate for one binding: module in the table, and the name in
/// its public symbols (or a submodule of it). `None` means the binding is
/// not aimed at the repository and is left to run-time testing.
pub fn check_binding(binding: &ImportBinding, table: &SymbolTable) -> Option<Option<ValidationFinding>> {
    let top = binding.module_path.split('.').next().unwrap_or("");
    if !table.top_level_packages().contains(top) {
        return None;
    }
    let finding = |kind, detail: String| ValidationFinding {
        binding: binding.clone(),
        kind,
        detail,
    };
    if !table.has_module(&binding.module_path) {
        return Some(Some(finding(
            FindingKind::MissingModule,
            format!("module `{}` is not in the repository", binding.module_path),
        )));
    }
    let Some(name) = &binding.symbol_name else {
        return Some(None);
    };
    let submodule = format!("{}.{name}", binding.module_path);
    let present = name == "*" || table.lookup(&binding.module_path, name).is_some() || table.has_module(&submodule);
    Some((!present).then(|| {
        finding(
            FindingKind::MissingSymbol,
            format!("`{name}` is not a public symbol of `{}`", binding.module_path),
        )
    }))
}

pub fn validate_imports(bundle: &ServiceBundle, table: &SymbolTable) -> Vec<ValidationFinding> {
    extract_bindings(bundle)
        .iter()
        .filter_map(|b| check_binding(b, table).flatten())
        .collect()
}

/// Model output for import repair: line edits, endpoints to drop, or both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportRepairDraft {
    #[serde(default)]
    pub steps: Vec<RepairStep>,
    #[serde(default)]
    pub drop_endpoints: Vec<String>,
    pub root_cause: String,
}

impl StructuredOutput for ImportRepairDraft {
    const SCHEMA_ID: &'static str = "import-repair/v1";

    fn check(&self) -> Result<(), String> {
        if self.steps.is_empty() && self.drop_endpoints.is_empty() {
            return Err("repair has neither steps nor endpoints to drop".into());
        }
        if self.steps.is_empty() {
            Ok(())
        } else {
            check_steps(&self.steps)
        }
    }
}

const IMPORT_REPAIR_SYSTEM: &str = "You fix import statements in a generated MCP adapter. Each \
finding names an import that does not resolve in the repository. Use the source excerpts, the \
candidate signatures and the full list of available symbols to rewrite the import lines and the \
calls that use them. Line numbers are 1-based and inclusive. When an endpoint targets nothing \
that exists, list it in drop_endpoints instead. Answer with JSON {\"steps\": [{\"file\", \
\"start_line\", \"end_line\", \"replacement\", \"explanation\"}], \"drop_endpoints\", \"root_cause\"}.";

const EXCERPT_LINES: usize = 80;

pub fn numbered(text: &str) -> String {
    text.lines()
        .enumerate()
        .map(|(i, l)| format!("{:>4} | {l}\n", i + 1))
        .collect()
}

fn import_repair_prompt(
    findings: &[ValidationFinding],
    bundle: &ServiceBundle,
    table: &SymbolTable,
    source_dir: &Path,
) -> String {
    let mut out = String::from("Findings:\n");
    for f in findings {
        out.push_str(&format!("- {}:{}: {}\n", f.binding.importing_file, f.binding.line, f.detail));
    }
    for file in [ADAPTER_PY, SERVICE_PY] {
        if let Some(text) = bundle.file(file) {
            out.push_str(&format!("\n{file}:\n{}", numbered(text)));
        }
    }
    let modules: BTreeSet<&str> = findings
        .iter()
        .filter(|f| f.kind == FindingKind::MissingSymbol)
        .map(|f| f.binding.module_path.as_str())
        .collect();
    for module in &modules {
        let Some(entry) = table.module(module) else { continue };
        out.push_str(&format!("\nSource excerpt of {module} ({}):\n", entry.file));
        let text = std::fs::read_to_string(source_dir.join(&entry.file)).unwrap_or_default();
        for line in text.lines().take(EXCERPT_LINES) {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("Signatures in {module}:\n"));
        for record in entry.symbols.values() {
            out.push_str(&format!("  {}\n", record.render_signature()));
        }
    }
    out.push_str(&format!("\nAvailable symbols:\n{}", table.digest()));
    out
}

/// Ask for an import fix, apply it and re-validate. The result must have
/// strictly fewer findings.
pub fn repair_imports(
    gateway: &Gateway,
    findings: &[ValidationFinding],
    bundle: &ServiceBundle,
    table: &SymbolTable,
    source_dir: &Path,
) -> Result<ServiceBundle, VerifyError> {
    if findings.is_empty() {
        return Err(VerifyError::Precondition("no import findings to repair".into()));
    }
    let draft: ImportRepairDraft = gateway.ask(
        PurposeTag::ImportRepair,
        IMPORT_REPAIR_SYSTEM,
        &import_repair_prompt(findings, bundle, table, source_dir),
    )?;
    let mut next = bundle.clone();
    if !draft.steps.is_empty() {
        apply_steps(&mut next.files, &draft.steps).map_err(VerifyError::PlanOutOfRange)?;
    }
    let drops: BTreeSet<String> = draft.drop_endpoints.iter().cloned().collect();
    let next = drop_endpoints(&next, &drops);
    let after = validate_imports(&next, table).len();
    if after >= findings.len() {
        return Err(VerifyError::NoProgress {
            before: findings.len(),
            after,
        });
    }
    Ok(next)
}

#[cfg(test)]
mod tests;
