//! Download and analysis: shallow clone, public symbol table, code report.

mod effects;
mod symbols;
mod workspace;

pub use effects::{call_effects, literal_escapes, module_effects, SideEffect};
pub use symbols::{
    absolute_module, build_symbol_table, module_path_for, parameters, python_sources, ModuleEntry,
    ParamKind, Parameter, ParseErrorRecord, SymbolKind, SymbolRecord, SymbolScan, SymbolTable,
};
pub use workspace::{clone_repository, find_readme, normalize_url, RepositoryWorkspace};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, PurposeTag, StructuredOutput};
use crate::python::is_identifier;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("not a repository: {0}")]
    NotARepository(String),
    #[error("clone failed: {0}")]
    CloneFailed(String),
    #[error("workspace error: {0}")]
    Workspace(String),
    #[error("untoolable repository: {0}")]
    Untoolable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocLink {
    pub capability: String,
    pub anchor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDraft {
    pub module: String,
    pub symbol: String,
    pub tool_name: String,
    pub description: String,
}

/// Model output for the code report; edges and resolution are added locally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeReportDraft {
    pub core_capabilities: Vec<String>,
    #[serde(default)]
    pub module_summaries: BTreeMap<String, String>,
    #[serde(default)]
    pub doc_links: Vec<DocLink>,
    pub candidate_endpoints: Vec<CandidateDraft>,
}

impl StructuredOutput for CodeReportDraft {
    const SCHEMA_ID: &'static str = "code-report/v1";

    fn check(&self) -> Result<(), String> {
        for c in &self.candidate_endpoints {
            if c.module.trim().is_empty() || c.symbol.trim().is_empty() {
                return Err("candidate endpoint without module or symbol".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolRef {
    pub module: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEndpoint {
    pub symbol: SymbolRef,
    pub tool_name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeReport {
    pub core_capabilities: Vec<String>,
    pub module_summaries: BTreeMap<String, String>,
    pub dependency_edges: Vec<(String, String)>,
    pub doc_links: Vec<DocLink>,
    pub candidate_endpoints: Vec<CandidateEndpoint>,
    /// Proposed endpoints that did not resolve in the symbol table.
    #[serde(default)]
    pub dropped_endpoints: Vec<CandidateDraft>,
}

impl CodeReport {
    pub fn toolable(&self) -> bool {
        !self.candidate_endpoints.is_empty()
    }
}

const REPORT_SYSTEM: &str = "You analyze a Python repository so that its functionality can be \
exposed as tools. Using the README and the list of public symbols, describe the core \
capabilities, summarize each module, link capabilities to README section anchors, and propose \
candidate tool endpoints. Only propose symbols from the list. Answer with JSON \
{\"core_capabilities\", \"module_summaries\", \"doc_links\": [{\"capability\", \"anchor\"}], \
\"candidate_endpoints\": [{\"module\", \"symbol\", \"tool_name\", \"description\"}]}.";

const README_BUDGET: usize = 8000;

pub fn report_prompt(workspace: &RepositoryWorkspace, table: &SymbolTable) -> String {
    let readme: String = workspace
        .readme_text
        .as_deref()
        .unwrap_or("(no README)")
        .chars()
        .take(README_BUDGET)
        .collect();
    format!("README:\n{readme}\n\nPublic symbols:\n{}", table.digest())
}

/// Build the code report. An empty symbol table is untoolable without asking
/// the model.
pub fn analyze_repository(
    gateway: &Gateway,
    workspace: &RepositoryWorkspace,
    table: &SymbolTable,
) -> Result<CodeReport, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::Untoolable(
            "no importable public functions or classes".into(),
        ));
    }
    let draft: CodeReportDraft = gateway.ask(
        PurposeTag::CodeReport,
        REPORT_SYSTEM,
        &report_prompt(workspace, table),
    )?;
    let report = resolve_report(draft, table);
    if !report.toolable() {
        return Err(AnalysisError::Untoolable(format!(
            "no resolvable candidate endpoints ({} proposed)",
            report.dropped_endpoints.len()
        )));
    }
    Ok(report)
}

/// Keep only endpoints whose symbol exists; give each a unique identifier name.
pub fn resolve_report(draft: CodeReportDraft, table: &SymbolTable) -> CodeReport {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut names = BTreeSet::new();
    let mut targets = BTreeSet::new();
    for candidate in draft.candidate_endpoints {
        let resolvable = table.lookup(&candidate.module, &candidate.symbol).is_some();
        let target = (candidate.module.clone(), candidate.symbol.clone());
        if !resolvable || !targets.insert(target) {
            dropped.push(candidate);
            continue;
        }
        let mut tool_name = sanitize_tool_name(&candidate.tool_name)
            .unwrap_or_else(|| sanitize_tool_name(&candidate.symbol).unwrap_or_else(|| "tool".into()));
        let base = tool_name.clone();
        let mut n = 2;
        while !names.insert(tool_name.clone()) {
            tool_name = format!("{base}_{n}");
            n += 1;
        }
        kept.push(CandidateEndpoint {
            symbol: SymbolRef {
                module: candidate.module,
                name: candidate.symbol,
            },
            tool_name,
            description: candidate.description,
        });
    }
    CodeReport {
        core_capabilities: draft.core_capabilities,
        module_summaries: draft.module_summaries,
        dependency_edges: table.dependency_edges(),
        doc_links: draft.doc_links,
        candidate_endpoints: kept,
        dropped_endpoints: dropped,
    }
}

/// snake_case identifier from free text, or `None` when nothing usable is left.
pub fn sanitize_tool_name(raw: &str) -> Option<String> {
    let mut out = String::new();
    let mut prev_underscore = false;
    let mut prev: Option<char> = None;
    for c in raw.trim().chars() {
        if c.is_ascii_alphanumeric() {
            // camelCase boundary: lower or digit followed by upper.
            if c.is_ascii_uppercase() && prev.is_some_and(|p| p.is_ascii_lowercase() || p.is_ascii_digit()) {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
            prev_underscore = false;
        } else if !out.is_empty() && !prev_underscore {
            out.push('_');
            prev_underscore = true;
        }
        prev = Some(c);
    }
    let out = out.trim_matches('_').to_string();
    if out.is_empty() {
        return None;
    }
    let out = if out.starts_with(|c: char| c.is_ascii_digit()) {
        format!("t_{out}")
    } else {
        out
    };
    Some(if is_identifier(&out) { out } else { format!("{out}_tool") })
}

/// Write `symbols.json`, `parse_errors.json` and (when given) `code_report.json`.
pub fn write_reports(
    reports_dir: &Path,
    scan: &SymbolScan,
    report: Option<&CodeReport>,
) -> std::io::Result<()> {
    std::fs::create_dir_all(reports_dir)?;
    crate::write_versioned_json(&reports_dir.join("symbols.json"), &scan.table)?;
    crate::write_versioned_json(
        &reports_dir.join("parse_errors.json"),
        &serde_json::json!({ "errors": scan.parse_errors }),
    )?;
    if let Some(report) = report {
        crate::write_versioned_json(&reports_dir.join("code_report.json"), report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SymbolTable {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("stats")).unwrap();
        std::fs::write(
            dir.path().join("stats/core.py"),
            "def mean(xs):\n    return sum(xs) / len(xs)\n\ndef median(xs):\n    return sorted(xs)[len(xs) // 2]\n",
        )
        .unwrap();
        build_symbol_table(dir.path()).table
    }

    fn draft(endpoints: &[(&str, &str, &str)]) -> CodeReportDraft {
        CodeReportDraft {
            core_capabilities: vec!["statistics".into()],
            module_summaries: BTreeMap::new(),
            doc_links: vec![],
            candidate_endpoints: endpoints
                .iter()
                .map(|(m, s, t)| CandidateDraft {
                    module: m.to_string(),
                    symbol: s.to_string(),
                    tool_name: t.to_string(),
                    description: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn unresolvable_endpoints_are_dropped() {
        let report = resolve_report(
            draft(&[("stats.core", "mean", "mean"), ("stats.core", "mode", "mode"), ("stats.nope", "x", "x")]),
            &table(),
        );
        assert_eq!(report.candidate_endpoints.len(), 1);
        assert_eq!(report.dropped_endpoints.len(), 2);
        assert!(report.toolable());
    }

    #[test]
    fn nothing_resolvable_is_not_toolable() {
        let report = resolve_report(draft(&[("stats.core", "mode", "mode")]), &table());
        assert!(!report.toolable());
    }

    #[test]
    fn empty_table_is_untoolable_without_model_call() {
        let gw = Gateway::replay(Default::default());
        let ws = RepositoryWorkspace {
            run_id: "r".into(),
            root: "/nonexistent".into(),
            source_url: "file:///x".into(),
            commit_id: "abc".into(),
            readme_text: None,
        };
        let err = analyze_repository(&gw, &ws, &SymbolTable::default()).unwrap_err();
        assert!(matches!(err, AnalysisError::Untoolable(_)));
        assert!(gw.calls().is_empty());
    }

    #[test]
    fn tool_names_are_identifiers_and_unique() {
        assert_eq!(sanitize_tool_name("Run PCA!").as_deref(), Some("run_pca"));
        assert_eq!(sanitize_tool_name("computeRisk").as_deref(), Some("compute_risk"));
        assert_eq!(sanitize_tool_name("class").as_deref(), Some("class_tool"));
        assert_eq!(sanitize_tool_name("2d plot").as_deref(), Some("t_2d_plot"));
        assert_eq!(sanitize_tool_name("!!"), None);
        let report = resolve_report(
            draft(&[("stats.core", "mean", "stat"), ("stats.core", "median", "stat")]),
            &table(),
        );
        let names: Vec<&str> = report.candidate_endpoints.iter().map(|c| c.tool_name.as_str()).collect();
        assert_eq!(names, ["stat", "stat_2"]);
    }
}
