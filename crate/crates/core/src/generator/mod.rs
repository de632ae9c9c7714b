//! Generate node: code report to the five-file MCP service bundle.

mod plan;
mod shape;
pub mod templates;

pub use plan::{apply_steps, check_steps, RepairPlan, RepairStep};
pub use shape::{check_bundle_shape, check_shape_with, tool_for_test, ShapeFinding, ShapeRule};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analysis::{CodeReport, SideEffect, SymbolRef, SymbolTable};
use crate::gateway::{Gateway, GatewayError, PurposeTag, StructuredOutput};
use crate::python::{is_identifier, parse_module, syntax::Stmt, walk_stmt_exprs};
use templates::{AdapterOp, TestCase, ADAPTER_PY, ADAPTER_RESERVED, BUNDLE_FILES, SERVICE_PY, TEST_PY};

/// The closed set of argument types a tool may accept.
pub const WIRE_TYPES: [&str; 6] = ["text", "integer", "real", "boolean", "list-of-text", "opaque-file-path"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRules {
    /// Wire type to the Python value the adapter hands to the repository.
    pub conversions: BTreeMap<String, String>,
    pub exception_policy: String,
    pub dependency_check: bool,
}

impl GenerationRules {
    pub fn standard() -> Self {
        let conversions = [
            ("text", "str"),
            ("integer", "int"),
            ("real", "float"),
            ("boolean", "bool"),
            ("list-of-text", "list[str]"),
            ("opaque-file-path", "str (resolved inside the allowed roots)"),
        ]
        .into_iter()
        .map(|(w, p)| (w.to_string(), p.to_string()))
        .collect();
        Self {
            conversions,
            exception_policy: "catch-all at the adapter boundary; {ok, result} or {ok: false, error}".into(),
            dependency_check: true,
        }
    }

    pub fn supports(&self, wire_type: &str) -> bool {
        self.conversions.contains_key(wire_type)
    }
}

impl Default for GenerationRules {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolParameter {
    pub name: String,
    pub wire_type: String,
    #[serde(default = "yes")]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default)]
    pub description: String,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEndpoint {
    pub tool_name: String,
    pub description: String,
    pub parameters: Vec<ToolParameter>,
    pub target: SymbolRef,
    #[serde(default)]
    pub risk_annotations: BTreeSet<SideEffect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleCall {
    pub tool: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub service_name: String,
    pub description: String,
    pub run_id: String,
    pub endpoints: Vec<ToolEndpoint>,
    pub dependencies: Vec<String>,
    pub usage: String,
    pub example_calls: Vec<ExampleCall>,
}

impl Manifest {
    pub fn endpoint(&self, tool: &str) -> Option<&ToolEndpoint> {
        self.endpoints.iter().find(|e| e.tool_name == tool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceBundle {
    pub files: BTreeMap<String, String>,
    pub manifest: Manifest,
    pub run_id: String,
    /// Files found next to the bundle that are not part of it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_files: Vec<String>,
}

impl ServiceBundle {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    pub fn tool_names(&self) -> Vec<String> {
        self.manifest.endpoints.iter().map(|e| e.tool_name.clone()).collect()
    }

    /// Write the files and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in &self.files {
            std::fs::write(dir.join(name), text)?;
        }
        crate::write_versioned_json(&dir.join(templates::MANIFEST_JSON), &self.manifest)
    }

    /// Read a bundle back. Missing files are simply absent; stray top-level
    /// files are listed in `extra_files`.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(templates::MANIFEST_JSON))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut files = BTreeMap::new();
        let mut extra_files = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !entry.file_type()?.is_file() || name == templates::MANIFEST_JSON {
                continue;
            }
            if BUNDLE_FILES.contains(&name.as_str()) {
                files.insert(name, std::fs::read_to_string(entry.path())?);
            } else if !name.starts_with('.') && !name.ends_with(".xml") && !name.ends_with(".json") {
                extra_files.push(name);
            }
        }
        Ok(Self {
            files,
            run_id: manifest.run_id.clone(),
            manifest,
            extra_files,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDraft {
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
    /// Python expression over `result`; absent means "call succeeds".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointDraft {
    pub tool_name: String,
    pub description: String,
    pub module: String,
    pub symbol: String,
    #[serde(default)]
    pub imports: Vec<String>,
    #[serde(default)]
    pub parameters: Vec<ToolParameter>,
    /// Python expression invoking the target with the converted parameters.
    pub call: String,
    /// Replacement body for the service stub. Anything but forwarding is
    /// rejected by the shape check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_body: Option<String>,
    #[serde(default)]
    pub example_arguments: Map<String, Value>,
    #[serde(default)]
    pub tests: Vec<TestDraft>,
}

/// Model output filling the bundle skeleton's holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleDraft {
    pub service_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub usage: String,
    pub endpoints: Vec<EndpointDraft>,
}

impl StructuredOutput for BundleDraft {
    const SCHEMA_ID: &'static str = "bundle-draft/v1";

    fn check(&self) -> Result<(), String> {
        if self.endpoints.is_empty() {
            return Err("bundle draft has no endpoints".into());
        }
        for ep in &self.endpoints {
            if ep.call.trim().is_empty() {
                return Err(format!("endpoint {} has no call expression", ep.tool_name));
            }
            let mut seen = BTreeSet::new();
            for p in &ep.parameters {
                if !seen.insert(p.name.as_str()) {
                    return Err(format!("endpoint {} repeats parameter {}", ep.tool_name, p.name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("report is not toolable")]
    NotToolable,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("template violation: {}", summarize(.findings))]
    TemplateViolation {
        findings: Vec<ShapeFinding>,
        bundle: Box<ServiceBundle>,
    },
    #[error("plan out of range: {0}")]
    PlanOutOfRange(String),
}

fn summarize(findings: &[ShapeFinding]) -> String {
    findings.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

const BUNDLE_SYSTEM: &str = "You write the variable parts of an MCP service for a Python \
repository. Skeleton files are fixed; you supply, per endpoint, the import statements the \
adapter needs, typed parameters (wire types: text, integer, real, boolean, list-of-text, \
opaque-file-path), a single Python expression calling the repository symbol with those \
parameters, example arguments, and at least one test with a check expression over `result`. \
Answer with JSON {\"service_name\", \"description\", \"usage\", \"endpoints\": [{\"tool_name\", \
\"description\", \"module\", \"symbol\", \"imports\", \"parameters\": [{\"name\", \"wire_type\", \
\"required\", \"default\", \"description\"}], \"call\", \"example_arguments\", \"tests\": \
[{\"name\", \"arguments\", \"check\"}]}]}.";

pub fn bundle_prompt(report: &CodeReport, table: &SymbolTable) -> String {
    let mut out = String::from("Candidate endpoints:\n");
    for c in &report.candidate_endpoints {
        let signature = table
            .lookup(&c.symbol.module, &c.symbol.name)
            .map(|r| r.render_signature())
            .unwrap_or_default();
        out.push_str(&format!(
            "- {} -> {}.{}: {} | {}\n",
            c.tool_name, c.symbol.module, c.symbol.name, signature, c.description
        ));
    }
    out.push_str("\nCore capabilities:\n");
    for cap in &report.core_capabilities {
        out.push_str(&format!("- {cap}\n"));
    }
    out
}

/// Ask the model for a draft and render it. Shape findings come back as
/// `TemplateViolation` carrying the rendered bundle, so the caller can review it.
pub fn generate_bundle(
    gateway: &Gateway,
    run_id: &str,
    report: &CodeReport,
    table: &SymbolTable,
    rules: &GenerationRules,
    dependencies: &[String],
) -> Result<ServiceBundle, GenerateError> {
    if !report.toolable() {
        return Err(GenerateError::NotToolable);
    }
    let draft: BundleDraft = gateway.ask(
        PurposeTag::BundleGeneration,
        BUNDLE_SYSTEM,
        &bundle_prompt(report, table),
    )?;
    let bundle = render_bundle(&draft, table, run_id, dependencies);
    let findings = check_shape_with(&bundle, rules);
    if findings.is_empty() {
        Ok(bundle)
    } else {
        Err(GenerateError::TemplateViolation {
            findings,
            bundle: Box::new(bundle),
        })
    }
}

/// Names an import statement binds in the importing module.
pub fn bound_names(import_line: &str) -> Vec<String> {
    let Ok(parsed) = parse_module(import_line.trim(), "<import>") else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for stmt in &parsed.body {
        match stmt {
            Stmt::Import(s) => {
                for alias in &s.names {
                    out.push(match &alias.asname {
                        Some(a) => a.to_string(),
                        None => alias.name.split('.').next().unwrap_or_default().to_string(),
                    });
                }
            }
            Stmt::ImportFrom(s) => {
                for alias in &s.names {
                    out.push(alias.asname.as_ref().unwrap_or(&alias.name).to_string());
                }
            }
            _ => {}
        }
    }
    out
}

/// Render a draft into a bundle. Endpoints whose target does not resolve are
/// dropped; tool names are made unique and kept clear of imported names.
pub fn render_bundle(
    draft: &BundleDraft,
    table: &SymbolTable,
    run_id: &str,
    dependencies: &[String],
) -> ServiceBundle {
    let service = crate::analysis::sanitize_tool_name(&draft.service_name).unwrap_or_else(|| "service".into());

    let mut imports: Vec<String> = Vec::new();
    for ep in &draft.endpoints {
        for line in &ep.imports {
            let line = line.trim().to_string();
            if !line.is_empty() && !imports.contains(&line) {
                imports.push(line);
            }
        }
    }
    let mut taken: BTreeSet<String> = imports.iter().flat_map(|l| bound_names(l)).collect();
    taken.extend(ADAPTER_RESERVED.iter().map(|s| s.to_string()));
    // Call expressions name their targets even when the import is missing;
    // a tool of the same name would turn that call into self-recursion.
    taken.extend(draft.endpoints.iter().map(|ep| ep.symbol.clone()));

    let mut endpoints: Vec<(ToolEndpoint, &EndpointDraft)> = Vec::new();
    let mut used = BTreeSet::new();
    for ep in &draft.endpoints {
        let Some(record) = table.lookup(&ep.module, &ep.symbol) else {
            tracing::warn!(module = %ep.module, symbol = %ep.symbol, "dropping unresolvable endpoint");
            continue;
        };
        let mut name = crate::analysis::sanitize_tool_name(&ep.tool_name)
            .or_else(|| crate::analysis::sanitize_tool_name(&ep.symbol))
            .unwrap_or_else(|| "tool".into());
        if taken.contains(&name) || !is_identifier(&name) {
            name = format!("{name}_tool");
        }
        let base = name.clone();
        let mut n = 2;
        while used.contains(&name) || taken.contains(&name) {
            name = format!("{base}_{n}");
            n += 1;
        }
        used.insert(name.clone());
        endpoints.push((
            ToolEndpoint {
                tool_name: name,
                description: ep.description.clone(),
                parameters: ep.parameters.clone(),
                target: SymbolRef {
                    module: ep.module.clone(),
                    name: ep.symbol.clone(),
                },
                risk_annotations: record.effects.iter().copied().chain(expression_effects(&ep.call)).collect(),
            },
            ep,
        ));
    }

    let service_eps: Vec<(ToolEndpoint, Option<String>)> = endpoints
        .iter()
        .map(|(ep, d)| (ep.clone(), d.service_body.clone()))
        .collect();
    let ops: Vec<AdapterOp<'_>> = endpoints
        .iter()
        .map(|(ep, d)| AdapterOp {
            endpoint: ep,
            call: d.call.trim(),
        })
        .collect();
    let mut cases = Vec::new();
    for (ep, d) in &endpoints {
        let mut names = BTreeSet::new();
        for t in &d.tests {
            let mut name = crate::analysis::sanitize_tool_name(&t.name).unwrap_or_else(|| "case".into());
            let base = name.clone();
            let mut n = 2;
            while !names.insert(name.clone()) {
                name = format!("{base}_{n}");
                n += 1;
            }
            cases.push(TestCase {
                tool: &ep.tool_name,
                name,
                arguments: &t.arguments,
                check: t.check.as_deref(),
            });
        }
        if d.tests.is_empty() {
            cases.push(TestCase {
                tool: &ep.tool_name,
                name: "smoke".into(),
                arguments: &d.example_arguments,
                check: None,
            });
        }
    }

    let mut files = BTreeMap::new();
    files.insert(templates::MAIN_PY.to_string(), templates::main_py(&service));
    files.insert(templates::START_MCP_PY.to_string(), templates::start_mcp_py(&service));
    files.insert(SERVICE_PY.to_string(), templates::service_py(&service, &service_eps));
    files.insert(ADAPTER_PY.to_string(), templates::adapter_py(&service, &imports, &ops));
    files.insert(TEST_PY.to_string(), templates::test_py(&service, &cases));

    let example_calls = endpoints
        .iter()
        .map(|(ep, d)| ExampleCall {
            tool: ep.tool_name.clone(),
            arguments: d.example_arguments.clone(),
        })
        .collect();
    let usage = if draft.usage.trim().is_empty() {
        format!("python main.py  # serves {service} over stdio")
    } else {
        draft.usage.clone()
    };
    ServiceBundle {
        files,
        manifest: Manifest {
            service_name: service,
            description: draft.description.clone(),
            run_id: run_id.to_string(),
            endpoints: endpoints.into_iter().map(|(ep, _)| ep).collect(),
            dependencies: dependencies.to_vec(),
            usage,
            example_calls,
        },
        run_id: run_id.to_string(),
        extra_files: Vec::new(),
    }
}

/// Effects of the calls inside a generated expression.
fn expression_effects(expr: &str) -> BTreeSet<SideEffect> {
    let mut out = BTreeSet::new();
    if let Ok(parsed) = parse_module(expr.trim(), "<call>") {
        walk_stmt_exprs(&parsed.body, true, &mut |e| {
            if let crate::python::syntax::Expr::Call(call) = e {
                out.extend(crate::analysis::call_effects(call));
            }
        });
    }
    out
}

/// Apply a repair plan. Only the files named in the plan change. Returns the
/// new bundle and the textual diff.
pub fn regenerate_with_plan(
    bundle: &ServiceBundle,
    plan: &RepairPlan,
    rules: &GenerationRules,
) -> Result<(ServiceBundle, String), GenerateError> {
    if plan.steps.is_empty() {
        return Err(GenerateError::PlanOutOfRange("plan has no steps".into()));
    }
    let mut next = bundle.clone();
    let diff = apply_steps(&mut next.files, &plan.steps).map_err(GenerateError::PlanOutOfRange)?;
    let findings = check_shape_with(&next, rules);
    if findings.is_empty() {
        Ok((next, diff))
    } else {
        Err(GenerateError::TemplateViolation {
            findings,
            bundle: Box::new(next),
        })
    }
}

/// Remove endpoints from every layer: service stub, adapter operation, tests
/// and manifest entry. Adapter imports left unused are pruned.
pub fn drop_endpoints(bundle: &ServiceBundle, tools: &BTreeSet<String>) -> ServiceBundle {
    let mut next = bundle.clone();
    if tools.is_empty() {
        return next;
    }
    if let Some(text) = bundle.file(SERVICE_PY) {
        next.files.insert(
            SERVICE_PY.into(),
            remove_defs(text, |stmt| match stmt {
                Stmt::AsyncFunctionDef(f) => decorator_tool(&f.decorator_list)
                    .map(|n| tools.contains(&n))
                    .unwrap_or_else(|| tools.contains(f.name.as_str())),
                Stmt::FunctionDef(f) => tools.contains(f.name.as_str()),
                _ => false,
            }),
        );
    }
    if let Some(text) = bundle.file(ADAPTER_PY) {
        let stripped = remove_defs(text, |stmt| match stmt {
            Stmt::AsyncFunctionDef(f) => tools.contains(f.name.as_str()),
            Stmt::FunctionDef(f) => tools.contains(f.name.as_str()),
            _ => false,
        });
        next.files.insert(ADAPTER_PY.into(), prune_imports(&stripped));
    }
    if let Some(text) = bundle.file(TEST_PY) {
        let names = bundle.tool_names();
        next.files.insert(
            TEST_PY.into(),
            remove_defs(text, |stmt| match stmt {
                Stmt::FunctionDef(f) => tool_for_test(f.name.as_str(), &names)
                    .is_some_and(|t| tools.contains(t)),
                _ => false,
            }),
        );
    }
    next.manifest.endpoints.retain(|e| !tools.contains(&e.tool_name));
    next.manifest.example_calls.retain(|c| !tools.contains(&c.tool));
    next
}

/// First positional argument of an `@tool("name", ...)` decorator.
pub(crate) fn decorator_tool(decorators: &[crate::python::syntax::Expr]) -> Option<String> {
    use crate::python::syntax::Expr;
    decorators.iter().find_map(|d| match d {
        Expr::Call(call) if crate::python::dotted_name(&call.func).as_deref() == Some("tool") => {
            call.args.first().and_then(crate::python::string_literal).map(str::to_string)
        }
        _ => None,
    })
}

/// Drop top-level statements matching `pred`, along with their decorators and
/// the blank lines in front of them.
fn remove_defs(text: &str, pred: impl Fn(&Stmt) -> bool) -> String {
    let Ok(parsed) = parse_module(text, "<bundle>") else {
        return text.to_string();
    };
    let mut spans = Vec::new();
    for stmt in &parsed.body {
        if !pred(stmt) {
            continue;
        }
        let decorators = match stmt {
            Stmt::FunctionDef(f) => &f.decorator_list[..],
            Stmt::AsyncFunctionDef(f) => &f.decorator_list[..],
            Stmt::ClassDef(c) => &c.decorator_list[..],
            _ => &[],
        };
        let start = decorators
            .iter()
            .map(|d| parsed.start_line(d))
            .chain([parsed.start_line(stmt)])
            .min()
            .unwrap_or(1);
        spans.push((start, parsed.end_line(stmt)));
    }
    remove_lines(text, &spans)
}

fn remove_lines(text: &str, spans: &[(usize, usize)]) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let mut drop = vec![false; lines.len()];
    for &(start, end) in spans {
        for flag in drop.iter_mut().take(end).skip(start - 1) {
            *flag = true;
        }
        let mut i = start - 1;
        while i > 0 && lines[i - 1].trim().is_empty() {
            drop[i - 1] = true;
            i -= 1;
        }
    }
    let mut out = String::new();
    for (line, dropped) in lines.iter().zip(drop) {
        if !dropped {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Remove top-level imports (outside the fixed template head) whose bound
/// names are never used.
fn prune_imports(text: &str) -> String {
    use crate::python::syntax::Expr;
    let Ok(parsed) = parse_module(text, "<adapter>") else {
        return text.to_string();
    };
    let mut used = BTreeSet::new();
    walk_stmt_exprs(&parsed.body, true, &mut |e| {
        if let Expr::Name(n) = e {
            used.insert(n.id.to_string());
        }
    });
    let head: BTreeSet<&str> = ["asyncio", "dataclasses", "os", "pathlib", "traceback"].into();
    let mut spans = Vec::new();
    for stmt in &parsed.body {
        if !matches!(stmt, Stmt::Import(_) | Stmt::ImportFrom(_)) {
            continue;
        }
        let names = bound_names(parsed.text_of(stmt));
        if names.iter().all(|n| head.contains(n.as_str())) {
            continue;
        }
        if !names.iter().any(|n| used.contains(n)) {
            spans.push((parsed.start_line(stmt), parsed.end_line(stmt)));
        }
    }
    if spans.is_empty() {
        return text.to_string();
    }
    // Imports are not preceded by blank lines we want to eat, so remove exactly.
    let lines: Vec<&str> = text.lines().collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        if !spans.iter().any(|&(s, e)| i + 1 >= s && i < e) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
