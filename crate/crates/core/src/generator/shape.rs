//! Mechanical pre-gate on the bundle layout, run before import validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::templates::{ADAPTER_PY, BUNDLE_FILES, SERVICE_PY, TEST_PY};
use super::{decorator_tool, GenerationRules, ServiceBundle};
use crate::python::syntax::{Expr, Stmt, StmtAsyncFunctionDef};
use crate::python::{dotted_name, parse_module, string_literal, ParsedModule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeRule {
    MissingFile,
    UnexpectedFile,
    UnparseableFile,
    NonForwardingService,
    ServiceExtraCode,
    MissingDecorator,
    DuplicateTool,
    SyncAdapter,
    MissingAdapterOp,
    ManifestMismatch,
    MissingEndpointTest,
    UnsupportedWireType,
    ShadowedImport,
}

impl ShapeRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeRule::MissingFile => "missing-file",
            ShapeRule::UnexpectedFile => "unexpected-file",
            ShapeRule::UnparseableFile => "unparseable-file",
            ShapeRule::NonForwardingService => "non-forwarding-service",
            ShapeRule::ServiceExtraCode => "service-extra-code",
            ShapeRule::MissingDecorator => "missing-decorator",
            ShapeRule::DuplicateTool => "duplicate-tool",
            ShapeRule::SyncAdapter => "sync-adapter",
            ShapeRule::MissingAdapterOp => "missing-adapter-op",
            ShapeRule::ManifestMismatch => "manifest-mismatch",
            ShapeRule::MissingEndpointTest => "missing-endpoint-test",
            ShapeRule::UnsupportedWireType => "unsupported-wire-type",
            ShapeRule::ShadowedImport => "shadowed-import",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShapeFinding {
    pub rule: ShapeRule,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub detail: String,
}

impl std::fmt::Display for ShapeFinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "{} {}:{}: {}", self.rule.as_str(), self.file, line, self.detail),
            None => write!(f, "{} {}: {}", self.rule.as_str(), self.file, self.detail),
        }
    }
}

struct Findings(Vec<ShapeFinding>);

impl Findings {
    fn add(&mut self, rule: ShapeRule, file: &str, line: Option<usize>, detail: impl Into<String>) {
        self.0.push(ShapeFinding {
            rule,
            file: file.to_string(),
            line,
            detail: detail.into(),
        });
    }
}

/// A tool in the service layer, as read back from the decorator.
struct ServiceTool {
    line: usize,
    wire: BTreeMap<String, String>,
    forwards_to: Option<String>,
}

pub fn check_bundle_shape(bundle: &ServiceBundle) -> Vec<ShapeFinding> {
    check_shape_with(bundle, &GenerationRules::standard())
}

/// Empty result means conformant.
pub fn check_shape_with(bundle: &ServiceBundle, rules: &GenerationRules) -> Vec<ShapeFinding> {
    let mut out = Findings(Vec::new());
    for name in BUNDLE_FILES {
        if !bundle.files.contains_key(name) {
            out.add(ShapeRule::MissingFile, name, None, "required file is absent");
        }
    }
    for name in bundle.files.keys().chain(&bundle.extra_files) {
        if !BUNDLE_FILES.contains(&name.as_str()) {
            out.add(ShapeRule::UnexpectedFile, name, None, "not one of the five bundle files");
        }
    }

    let mut parsed: BTreeMap<&str, ParsedModule> = BTreeMap::new();
    for (name, text) in &bundle.files {
        if !name.ends_with(".py") {
            continue;
        }
        match parse_module(text, name) {
            Ok(module) => {
                parsed.insert(name.as_str(), module);
            }
            Err(err) => out.add(ShapeRule::UnparseableFile, name, Some(err.line), err.message),
        }
    }

    let tools = parsed.get(SERVICE_PY).map(|m| check_service(m, &mut out));
    let adapter_ops = parsed.get(ADAPTER_PY).map(|m| check_adapter(m, &mut out));

    if let (Some(tools), Some(ops)) = (&tools, &adapter_ops) {
        for (name, tool) in tools {
            if let Some(op) = &tool.forwards_to {
                if !ops.contains(op) {
                    out.add(
                        ShapeRule::MissingAdapterOp,
                        SERVICE_PY,
                        Some(tool.line),
                        format!("tool {name} forwards to adapter.{op}, which is not an async operation"),
                    );
                }
            }
        }
    }

    let mut reported_wire = BTreeSet::new();
    if let Some(tools) = &tools {
        for (name, tool) in tools {
            for wire in tool.wire.values() {
                if !rules.supports(wire) && reported_wire.insert((name.clone(), wire.clone())) {
                    out.add(
                        ShapeRule::UnsupportedWireType,
                        SERVICE_PY,
                        Some(tool.line),
                        format!("tool {name} uses wire type `{wire}`"),
                    );
                }
            }
        }
        check_manifest(bundle, tools, rules, &mut reported_wire, &mut out);
    }

    if let Some(tests) = parsed.get(TEST_PY) {
        let names = bundle.tool_names();
        let mut covered = BTreeSet::new();
        for stmt in &tests.body {
            if let Stmt::FunctionDef(f) = stmt {
                if let Some(tool) = tool_for_test(f.name.as_str(), &names) {
                    covered.insert(tool.to_string());
                }
            }
        }
        for name in &names {
            if !covered.contains(name) {
                out.add(
                    ShapeRule::MissingEndpointTest,
                    TEST_PY,
                    None,
                    format!("no test_{name}_* function"),
                );
            }
        }
    }

    let mut findings = out.0;
    findings.sort();
    findings.dedup();
    findings
}

/// The tool a test function exercises: longest tool name `t` such that the
/// function is called `test_{t}_...`.
pub fn tool_for_test<'a>(function: &str, tools: &'a [String]) -> Option<&'a str> {
    let rest = function.strip_prefix("test_")?;
    tools
        .iter()
        .filter(|t| rest.strip_prefix(t.as_str()).is_some_and(|r| r.starts_with('_')))
        .max_by_key(|t| t.len())
        .map(String::as_str)
}

fn check_service(module: &ParsedModule, out: &mut Findings) -> BTreeMap<String, ServiceTool> {
    let mut tools: BTreeMap<String, ServiceTool> = BTreeMap::new();
    for (i, stmt) in module.body.iter().enumerate() {
        let line = Some(module.start_line(stmt));
        match stmt {
            Stmt::Expr(e) if i == 0 && string_literal(&e.value).is_some() => {}
            Stmt::Import(s) if s.names.iter().all(|a| a.name.as_str() == "adapter" && a.asname.is_none()) => {}
            Stmt::ImportFrom(s)
                if s.module.as_deref() == Some("start_mcp")
                    && s.names.iter().all(|a| a.name.as_str() == "tool" && a.asname.is_none()) => {}
            Stmt::AsyncFunctionDef(def) => {
                let Some(name) = decorator_tool(&def.decorator_list) else {
                    out.add(
                        ShapeRule::MissingDecorator,
                        SERVICE_PY,
                        line,
                        format!("{} has no @tool(name, description, wire) decorator", def.name),
                    );
                    continue;
                };
                if def.decorator_list.len() != 1 {
                    out.add(ShapeRule::ServiceExtraCode, SERVICE_PY, line, format!("{name} has extra decorators"));
                }
                let wire = decorator_wire(&def.decorator_list);
                let params = signature_names(def);
                if wire.as_ref().map(|w| w.keys().cloned().collect::<Vec<_>>()) != Some(sorted(&params)) {
                    out.add(
                        ShapeRule::ManifestMismatch,
                        SERVICE_PY,
                        line,
                        format!("decorator wire types for {name} do not match its parameters"),
                    );
                }
                let forwards_to = forwarding_target(def, &params);
                if forwards_to.is_none() {
                    out.add(
                        ShapeRule::NonForwardingService,
                        SERVICE_PY,
                        line,
                        format!("{name} must consist of `return await adapter.<op>(p=p, ...)`"),
                    );
                }
                let entry = ServiceTool {
                    line: module.start_line(stmt),
                    wire: wire.unwrap_or_default(),
                    forwards_to,
                };
                if tools.insert(name.clone(), entry).is_some() {
                    out.add(ShapeRule::DuplicateTool, SERVICE_PY, line, format!("tool {name} declared twice"));
                }
            }
            Stmt::FunctionDef(def) => out.add(
                ShapeRule::ServiceExtraCode,
                SERVICE_PY,
                line,
                format!("synchronous function {} in the tool layer", def.name),
            ),
            _ => out.add(
                ShapeRule::ServiceExtraCode,
                SERVICE_PY,
                line,
                format!("statement not allowed in the tool layer: {}", first_line(module.text_of(stmt))),
            ),
        }
    }
    tools
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or_default()
}

fn sorted(names: &[String]) -> Vec<String> {
    let mut v = names.to_vec();
    v.sort();
    v
}

fn signature_names(def: &StmtAsyncFunctionDef) -> Vec<String> {
    let a = &def.args;
    let mut names: Vec<String> = a
        .posonlyargs
        .iter()
        .chain(&a.args)
        .chain(&a.kwonlyargs)
        .map(|p| p.def.arg.to_string())
        .collect();
    if let Some(v) = &a.vararg {
        names.push(format!("*{}", v.arg));
    }
    if let Some(k) = &a.kwarg {
        names.push(format!("**{}", k.arg));
    }
    names
}

/// Third decorator argument as a literal `{param: wire}` dict.
fn decorator_wire(decorators: &[Expr]) -> Option<BTreeMap<String, String>> {
    decorators.iter().find_map(|d| {
        let Expr::Call(call) = d else { return None };
        if dotted_name(&call.func).as_deref() != Some("tool") || call.args.len() != 3 {
            return None;
        }
        let Expr::Dict(dict) = &call.args[2] else { return None };
        let mut out = BTreeMap::new();
        for (k, v) in dict.keys.iter().zip(&dict.values) {
            let key = k.as_ref().and_then(string_literal)?;
            let value = string_literal(v)?;
            out.insert(key.to_string(), value.to_string());
        }
        Some(out)
    })
}

/// `return await adapter.op(a=a, b=b)` with every parameter forwarded once.
fn forwarding_target(def: &StmtAsyncFunctionDef, params: &[String]) -> Option<String> {
    let body: Vec<&Stmt> = def
        .body
        .iter()
        .enumerate()
        .filter(|(i, s)| !(*i == 0 && matches!(s, Stmt::Expr(e) if string_literal(&e.value).is_some())))
        .map(|(_, s)| s)
        .collect();
    let [Stmt::Return(ret)] = body.as_slice() else { return None };
    let Expr::Await(awaited) = ret.value.as_deref()? else { return None };
    let Expr::Call(call) = awaited.value.as_ref() else { return None };
    let Expr::Attribute(attr) = call.func.as_ref() else { return None };
    if !matches!(attr.value.as_ref(), Expr::Name(n) if n.id.as_str() == "adapter") || !call.args.is_empty() {
        return None;
    }
    let mut forwarded = Vec::new();
    for kw in &call.keywords {
        let arg = kw.arg.as_ref()?.to_string();
        match &kw.value {
            Expr::Name(n) if n.id.as_str() == arg => forwarded.push(arg),
            _ => return None,
        }
    }
    let mut expected = sorted(params);
    expected.dedup();
    if sorted(&forwarded) != expected || forwarded.len() != params.len() {
        return None;
    }
    Some(attr.attr.to_string())
}

/// Public async operations in the adapter; public synchronous ones are findings.
fn check_adapter(module: &ParsedModule, out: &mut Findings) -> BTreeSet<String> {
    let mut ops = BTreeSet::new();
    let mut imported = BTreeSet::new();
    for stmt in &module.body {
        match stmt {
            Stmt::Import(s) => {
                imported.extend(s.names.iter().map(|a| match &a.asname {
                    Some(n) => n.to_string(),
                    None => a.name.split('.').next().unwrap_or_default().to_string(),
                }));
            }
            Stmt::ImportFrom(s) => {
                imported.extend(s.names.iter().map(|a| a.asname.as_ref().unwrap_or(&a.name).to_string()));
            }
            Stmt::AsyncFunctionDef(def) => {
                // The operation would call itself instead of the library symbol.
                if imported.contains(def.name.as_str()) {
                    out.add(
                        ShapeRule::ShadowedImport,
                        ADAPTER_PY,
                        Some(module.start_line(stmt)),
                        format!("adapter operation {} shadows an imported name", def.name),
                    );
                }
                ops.insert(def.name.to_string());
            }
            Stmt::FunctionDef(def) if !def.name.starts_with('_') => out.add(
                ShapeRule::SyncAdapter,
                ADAPTER_PY,
                Some(module.start_line(stmt)),
                format!("adapter operation {} is synchronous", def.name),
            ),
            _ => {}
        }
    }
    ops
}

fn check_manifest(
    bundle: &ServiceBundle,
    tools: &BTreeMap<String, ServiceTool>,
    rules: &GenerationRules,
    reported_wire: &mut BTreeSet<(String, String)>,
    out: &mut Findings,
) {
    let mut seen = BTreeSet::new();
    for ep in &bundle.manifest.endpoints {
        if !seen.insert(ep.tool_name.as_str()) {
            out.add(ShapeRule::DuplicateTool, "manifest.json", None, format!("tool {} listed twice", ep.tool_name));
        }
        for p in &ep.parameters {
            if !rules.supports(&p.wire_type) && reported_wire.insert((ep.tool_name.clone(), p.wire_type.clone())) {
                out.add(
                    ShapeRule::UnsupportedWireType,
                    "manifest.json",
                    None,
                    format!("tool {} uses wire type `{}`", ep.tool_name, p.wire_type),
                );
            }
        }
        match tools.get(&ep.tool_name) {
            None => out.add(
                ShapeRule::ManifestMismatch,
                "manifest.json",
                None,
                format!("endpoint {} has no service-layer tool", ep.tool_name),
            ),
            Some(tool) => {
                let declared: BTreeMap<String, String> =
                    ep.parameters.iter().map(|p| (p.name.clone(), p.wire_type.clone())).collect();
                if declared != tool.wire {
                    out.add(
                        ShapeRule::ManifestMismatch,
                        "manifest.json",
                        None,
                        format!("parameters of {} differ from the service layer", ep.tool_name),
                    );
                }
            }
        }
    }
    for name in tools.keys() {
        if !seen.contains(name.as_str()) {
            out.add(
                ShapeRule::ManifestMismatch,
                SERVICE_PY,
                Some(tools[name].line),
                format!("tool {name} is not in the manifest"),
            );
        }
    }
}
