//! Build-time static scans over a generated bundle.

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};

use crate::generator::templates::{ADAPTER_PY, SERVICE_PY};
use crate::generator::ServiceBundle;
use crate::python::syntax::{self, Constant, Expr, Operator, Stmt};
use crate::python::{callee_name, dotted_name, keyword, parse_module, string_literal, walk_body, walk_expr, ParsedModule};

use super::{Axis, PathPolicy, SecurityFinding, Severity};

/// Files that hold executable logic. The launcher and entry point are fixed
/// templates.
const SCANNED: [&str; 2] = [ADAPTER_PY, SERVICE_PY];

/// Calls whose first argument (or `file`/`path` keyword) is a filesystem path.
const PATH_FUNCTIONS: &[&str] = &[
    "open", "io.open", "builtins.open", "os.remove", "os.unlink", "os.rmdir", "os.removedirs",
    "os.makedirs", "os.mkdir", "os.listdir", "os.scandir", "os.walk", "os.rename", "os.replace",
    "os.chmod", "shutil.rmtree", "shutil.copy", "shutil.copyfile", "shutil.copy2",
    "shutil.copytree", "shutil.move", "np.save", "numpy.save", "np.load", "numpy.load",
    "np.savetxt", "numpy.savetxt", "np.loadtxt", "numpy.loadtxt", "pd.read_csv", "pandas.read_csv",
];
/// Calls whose second argument is also a destination path.
const TWO_PATH_FUNCTIONS: &[&str] = &[
    "os.rename", "os.replace", "shutil.copy", "shutil.copyfile", "shutil.copy2",
    "shutil.copytree", "shutil.move",
];
/// Methods acting on the path held by their receiver.
const PATH_METHODS: &[&str] = &[
    "write_text", "write_bytes", "read_text", "read_bytes", "unlink", "rmdir", "mkdir", "touch",
    "rename", "replace", "iterdir",
];
/// Methods taking the destination path as first argument.
const PATH_ARG_METHODS: &[&str] = &["to_csv", "to_json", "to_excel", "to_parquet", "savefig"];

const SHELL_FUNCTIONS: &[&str] = &["os.system", "os.popen", "subprocess.getoutput", "subprocess.getstatusoutput"];
const SUBPROCESS_FUNCTIONS: &[&str] = &[
    "subprocess.run", "subprocess.call", "subprocess.check_call", "subprocess.check_output",
    "subprocess.Popen", "asyncio.create_subprocess_shell", "asyncio.create_subprocess_exec",
];

/// Confidentiality: every path handed to a filesystem operation must be
/// provably inside a whitelist root.
pub fn scan_confidentiality(bundle: &ServiceBundle, policy: &PathPolicy) -> Vec<SecurityFinding> {
    let mut out = Vec::new();
    for file in SCANNED {
        let Some(module) = bundle.file(file).and_then(|t| parse_module(t, file).ok()) else {
            continue;
        };
        for stmt in &module.body {
            let (name, body) = match stmt {
                Stmt::FunctionDef(f) => (f.name.as_str(), &f.body),
                Stmt::AsyncFunctionDef(f) => (f.name.as_str(), &f.body),
                _ => continue,
            };
            // The template's own resolver is the containment check itself.
            if name == "_resolve_path" {
                continue;
            }
            let safe = safe_path_names(body);
            for_each_call(body, &mut |call| {
                for path in path_arguments(call) {
                    if let Some(detail) = unverified_path(path, &safe, policy) {
                        out.push(SecurityFinding {
                            axis: Axis::Confidentiality,
                            rule_id: detail.0.into(),
                            file: file.into(),
                            line: module.start_line(path),
                            severity: Severity::Blocking,
                            detail: format!("{} in {name}: {}", detail.1, module.text_of(path)),
                        });
                    }
                }
            });
        }
    }
    out.sort();
    out
}

fn for_each_call<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&'a syntax::ExprCall)) {
    crate::python::walk_stmt_exprs(body, true, &mut |e| {
        if let Expr::Call(call) = e {
            f(call);
        }
    });
}

/// Names bound (anywhere in the body) to the result of `_resolve_path(...)`
/// or `_convert(..., "opaque-file-path")`.
fn safe_path_names(body: &[Stmt]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_body(body, true, &mut |stmt| {
        if let Stmt::Assign(a) = stmt {
            if is_resolved_path(&a.value) {
                for t in &a.targets {
                    if let Expr::Name(n) = t {
                        out.insert(n.id.to_string());
                    }
                }
            }
        }
    });
    out
}

fn is_resolved_path(expr: &Expr) -> bool {
    let Expr::Call(call) = expr else { return false };
    match callee_name(call).as_deref() {
        Some("_resolve_path") => true,
        Some("_convert") => call.args.get(1).and_then(string_literal) == Some("opaque-file-path"),
        _ => false,
    }
}

fn path_arguments(call: &syntax::ExprCall) -> Vec<&Expr> {
    let mut out = Vec::new();
    let name = callee_name(call).unwrap_or_default();
    if PATH_FUNCTIONS.contains(&name.as_str()) {
        if let Some(first) = call.args.first().or_else(|| keyword(call, "file")).or_else(|| keyword(call, "path")) {
            out.push(first);
        }
        if TWO_PATH_FUNCTIONS.contains(&name.as_str()) {
            if let Some(second) = call.args.get(1).or_else(|| keyword(call, "dst")) {
                out.push(second);
            }
        }
        return out;
    }
    if let Expr::Attribute(attr) = call.func.as_ref() {
        let method = attr.attr.as_str();
        if PATH_METHODS.contains(&method) {
            // `Path(x).write_text(...)` acts on `x`; `p.write_text(...)` on `p`.
            let receiver = match attr.value.as_ref() {
                Expr::Call(inner)
                    if matches!(callee_name(inner).as_deref(), Some("Path" | "pathlib.Path")) =>
                {
                    inner.args.first()
                }
                other => Some(other),
            };
            out.extend(receiver);
            if matches!(method, "rename" | "replace") {
                out.extend(call.args.first());
            }
        } else if PATH_ARG_METHODS.contains(&method) {
            out.extend(call.args.first().or_else(|| keyword(call, "path_or_buf")));
        }
    }
    out
}

/// `Some((rule, reason))` when `expr` is not provably inside a whitelist root.
fn unverified_path(expr: &Expr, safe: &BTreeSet<String>, policy: &PathPolicy) -> Option<(&'static str, String)> {
    match expr {
        Expr::Constant(c) => match &c.value {
            Constant::Str(s) if policy.permits_literal(s) => None,
            Constant::Str(s) => Some(("path-escape", format!("literal path `{s}` leaves the whitelist"))),
            // File descriptors.
            Constant::Int(_) => None,
            _ => Some(("unverified-path", "non-path constant".into())),
        },
        Expr::Name(n) if safe.contains(n.id.as_str()) => None,
        e if is_resolved_path(e) => None,
        Expr::Call(call)
            if call.args.len() == 1
                && matches!(callee_name(call).as_deref(), Some("str" | "os.fspath" | "Path" | "pathlib.Path")) =>
        {
            unverified_path(&call.args[0], safe, policy)
        }
        // `safe / "part"` and `os.path.join(safe, "part", ...)`.
        Expr::BinOp(b) if b.op == Operator::Div => {
            unverified_path(&b.left, safe, policy).or_else(|| relative_component(&b.right))
        }
        Expr::Call(call) if dotted_name(&call.func).as_deref() == Some("os.path.join") && !call.args.is_empty() => {
            unverified_path(&call.args[0], safe, policy)
                .or_else(|| call.args[1..].iter().find_map(relative_component))
        }
        _ => Some(("unverified-path", "path is not resolved against the whitelist".into())),
    }
}

/// A joined component is fine only as a literal that stays below its base.
fn relative_component(expr: &Expr) -> Option<(&'static str, String)> {
    match string_literal(expr) {
        Some(s) if !crate::analysis::literal_escapes(s) => None,
        Some(s) => Some(("path-escape", format!("component `{s}` climbs out of its base"))),
        None => Some(("unverified-path", "dynamic path component".into())),
    }
}

/// Lexical normalization: `.` dropped, `..` pops. Never touches the disk.
pub fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for part in path.components() {
        match part {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

/// Integrity: no shell-string command built from endpoint parameters, no
/// dynamic shell invocation, no `eval`/`exec` of parameters.
pub fn scan_integrity(bundle: &ServiceBundle) -> Vec<SecurityFinding> {
    let mut out = Vec::new();
    for file in SCANNED {
        let Some(module) = bundle.file(file).and_then(|t| parse_module(t, file).ok()) else {
            continue;
        };
        for stmt in &module.body {
            let (name, args, body) = match stmt {
                Stmt::FunctionDef(f) => (f.name.as_str(), &f.args, &f.body),
                Stmt::AsyncFunctionDef(f) => (f.name.as_str(), &f.args, &f.body),
                _ => continue,
            };
            let tainted = taint(args, body);
            for_each_call(body, &mut |call| {
                if let Some((rule, reason)) = injection(call, &tainted) {
                    out.push(SecurityFinding {
                        axis: Axis::Integrity,
                        rule_id: rule.into(),
                        file: file.into(),
                        line: module.start_line(call),
                        severity: Severity::Blocking,
                        detail: format!("{reason} in {name}: {}", first_line(module.text_of(call))),
                    });
                }
            });
        }
    }
    out.sort();
    out
}

/// Availability: advisory notes on unbounded waits and loops.
pub fn scan_availability(bundle: &ServiceBundle) -> Vec<SecurityFinding> {
    let mut out = Vec::new();
    for file in SCANNED {
        let Some(module) = bundle.file(file).and_then(|t| parse_module(t, file).ok()) else {
            continue;
        };
        walk_body(&module.body, true, &mut |stmt| {
            if let Stmt::While(w) = stmt {
                let forever = matches!(w.test.as_ref(), Expr::Constant(c) if matches!(c.value, Constant::Bool(true)));
                if forever && !has_exit(&w.body) {
                    out.push(advisory(&module, file, stmt, "unbounded-loop", "`while True` without break or return"));
                }
            }
        });
        for_each_call(&module.body, &mut |call| {
            if callee_name(call).as_deref() == Some("time.sleep") && !call.args.first().is_some_and(|a| matches!(a, Expr::Constant(_))) {
                out.push(SecurityFinding {
                    axis: Axis::Availability,
                    rule_id: "dynamic-sleep".into(),
                    file: file.into(),
                    line: module.start_line(call),
                    severity: Severity::Advisory,
                    detail: "sleep duration is not a constant".into(),
                });
            }
        });
    }
    out.sort();
    out
}

fn advisory(module: &ParsedModule, file: &str, stmt: &Stmt, rule: &str, detail: &str) -> SecurityFinding {
    SecurityFinding {
        axis: Axis::Availability,
        rule_id: rule.into(),
        file: file.into(),
        line: module.start_line(stmt),
        severity: Severity::Advisory,
        detail: detail.into(),
    }
}

fn has_exit(body: &[Stmt]) -> bool {
    let mut found = false;
    walk_body(body, false, &mut |s| {
        if matches!(s, Stmt::Break(_) | Stmt::Return(_) | Stmt::Raise(_)) {
            found = true;
        }
    });
    found
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or_default()
}

/// Names carrying endpoint parameter data, propagated through assignments
/// until a fixpoint.
fn taint(args: &syntax::Arguments, body: &[Stmt]) -> BTreeSet<String> {
    let mut tainted: BTreeSet<String> = args
        .posonlyargs
        .iter()
        .chain(&args.args)
        .chain(&args.kwonlyargs)
        .map(|a| a.def.arg.to_string())
        .chain(args.vararg.iter().map(|a| a.arg.to_string()))
        .chain(args.kwarg.iter().map(|a| a.arg.to_string()))
        .collect();
    loop {
        let before = tainted.len();
        walk_body(body, true, &mut |stmt| {
            let (targets, value): (Vec<&Expr>, &Expr) = match stmt {
                Stmt::Assign(a) => (a.targets.iter().collect(), &a.value),
                Stmt::AugAssign(a) => (vec![a.target.as_ref()], &a.value),
                Stmt::AnnAssign(a) => match &a.value {
                    Some(v) => (vec![a.target.as_ref()], v.as_ref()),
                    None => return,
                },
                Stmt::For(f) => (vec![f.target.as_ref()], &f.iter),
                _ => return,
            };
            if mentions(value, &tainted) {
                for t in targets {
                    walk_expr(t, &mut |e| {
                        if let Expr::Name(n) = e {
                            tainted.insert(n.id.to_string());
                        }
                    });
                }
            }
        });
        if tainted.len() == before {
            return tainted;
        }
    }
}

fn mentions(expr: &Expr, names: &BTreeSet<String>) -> bool {
    let mut hit = false;
    walk_expr(expr, &mut |e| {
        if let Expr::Name(n) = e {
            hit |= names.contains(n.id.as_str());
        }
    });
    hit
}

/// String built by concatenation, interpolation or formatting.
fn builds_string(expr: &Expr) -> bool {
    match expr {
        Expr::JoinedStr(_) => true,
        Expr::BinOp(b) => matches!(b.op, Operator::Add | Operator::Mod),
        Expr::Call(c) => matches!(c.func.as_ref(), Expr::Attribute(a) if matches!(a.attr.as_str(), "format" | "join")),
        _ => false,
    }
}

fn is_truthy_constant(expr: Option<&Expr>) -> bool {
    matches!(expr, Some(Expr::Constant(c)) if matches!(c.value, Constant::Bool(true)) || matches!(&c.value, Constant::Int(i) if i.to_string() != "0"))
}

fn injection(call: &syntax::ExprCall, tainted: &BTreeSet<String>) -> Option<(&'static str, String)> {
    let name = callee_name(call)?;
    let command = call.args.first().or_else(|| keyword(call, "args")).or_else(|| keyword(call, "cmd"));
    let dynamic = command.is_some_and(|c| !matches!(c, Expr::Constant(_)) && !is_literal_list(c));
    let from_params = command.is_some_and(|c| mentions(c, tainted));

    if matches!(name.as_str(), "eval" | "exec" | "builtins.eval" | "builtins.exec") && from_params {
        return Some(("code-injection", format!("{name} evaluates parameter data")));
    }
    if SHELL_FUNCTIONS.contains(&name.as_str()) && dynamic {
        return Some(("command-injection", format!("{name} runs a dynamic shell string")));
    }
    if !SUBPROCESS_FUNCTIONS.contains(&name.as_str()) {
        return None;
    }
    // A non-constant shell flag counts as a shell.
    let shell_flag = keyword(call, "shell");
    let shell = name == "asyncio.create_subprocess_shell"
        || is_truthy_constant(shell_flag)
        || shell_flag.is_some_and(|v| !matches!(v, Expr::Constant(_)));
    if shell && dynamic {
        return Some(("command-injection", format!("{name} with a shell and a dynamic command")));
    }
    // A command string assembled from parameters, even without a shell, is
    // shell-string construction (and commonly re-split with shlex).
    let cmd = command?;
    let assembled = builds_string(cmd)
        || matches!(cmd, Expr::Call(c) if callee_name(c).as_deref() == Some("shlex.split") && c.args.first().is_some_and(builds_string));
    if assembled && from_params {
        return Some(("command-injection", format!("{name} command string built from parameters")));
    }
    None
}

fn is_literal_list(expr: &Expr) -> bool {
    match expr {
        Expr::List(l) => l.elts.iter().all(|e| matches!(e, Expr::Constant(_))),
        Expr::Tuple(t) => t.elts.iter().all(|e| matches!(e, Expr::Constant(_))),
        _ => false,
    }
}
