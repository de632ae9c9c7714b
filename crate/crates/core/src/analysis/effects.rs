//! Mechanical side-effect tags for repository callables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::python::syntax::{Expr, ExprCall, Stmt};
use crate::python::{callee_name, keyword, string_literal, walk_stmt_exprs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideEffect {
    ReadsFs,
    WritesFs,
    WritesFsOutside,
    Network,
    ExecutesSubprocess,
    Delete,
    Commit,
    Payment,
}

impl SideEffect {
    pub fn as_str(self) -> &'static str {
        match self {
            SideEffect::ReadsFs => "reads-fs",
            SideEffect::WritesFs => "writes-fs",
            SideEffect::WritesFsOutside => "writes-fs-outside",
            SideEffect::Network => "network",
            SideEffect::ExecutesSubprocess => "executes-subprocess",
            SideEffect::Delete => "delete",
            SideEffect::Commit => "commit",
            SideEffect::Payment => "payment",
        }
    }
}

impl std::fmt::Display for SideEffect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const READ_CALLS: &[&str] = &[
    "read_text", "read_bytes", "read_csv", "read_excel", "read_json", "read_table",
    "read_parquet", "loadtxt", "genfromtxt", "listdir", "scandir", "iterdir", "imread",
];
const READ_DOTTED: &[&str] = &[
    "json.load", "pickle.load", "np.load", "numpy.load", "yaml.safe_load", "yaml.load",
    "os.walk", "glob.glob", "glob.iglob", "os.path.exists", "os.path.getsize", "os.stat",
];
const WRITE_CALLS: &[&str] = &[
    "write_text", "write_bytes", "to_csv", "to_excel", "to_json", "to_parquet", "savefig",
    "savetxt", "imwrite", "makedirs", "mkdir", "touch", "writelines",
];
const WRITE_DOTTED: &[&str] = &[
    "json.dump", "pickle.dump", "np.save", "numpy.save", "np.savez", "numpy.savez",
    "shutil.copy", "shutil.copyfile", "shutil.copy2", "shutil.copytree", "shutil.move",
    "os.rename", "os.replace", "yaml.dump", "yaml.safe_dump",
];
const DELETE_CALLS: &[&str] = &["unlink", "rmdir", "rmtree"];
const DELETE_DOTTED: &[&str] = &["os.remove", "os.unlink", "os.rmdir", "shutil.rmtree", "os.removedirs"];
const NETWORK_PREFIXES: &[&str] = &[
    "requests.", "httpx.", "urllib.request.", "urllib3.", "socket.", "http.client.",
    "smtplib.", "aiohttp.", "ftplib.",
];
const NETWORK_CALLS: &[&str] = &["urlopen", "urlretrieve"];
const SUBPROCESS_PREFIXES: &[&str] = &[
    "subprocess.", "os.exec", "os.spawn", "os.posix_spawn", "pty.spawn", "asyncio.create_subprocess",
];
const SUBPROCESS_DOTTED: &[&str] = &["os.system", "os.popen"];
const PAYMENT_CALLS: &[&str] = &["charge", "pay", "make_payment", "create_payment", "refund"];

/// Literal path that lands outside any workspace: absolute, home-relative or
/// climbing above its starting point.
pub fn literal_escapes(path: &str) -> bool {
    if path.starts_with('/') || path.starts_with('~') || path.starts_with('\\') {
        return true;
    }
    let mut depth: i64 = 0;
    for part in path.split(['/', '\\']) {
        match part {
            "" | "." => {}
            ".." => {
                depth -= 1;
                if depth < 0 {
                    return true;
                }
            }
            _ => depth += 1,
        }
    }
    false
}

/// Effects of a single call expression.
pub fn call_effects(call: &ExprCall) -> BTreeSet<SideEffect> {
    let mut out = BTreeSet::new();
    let Some(name) = callee_name(call) else { return out };
    let last = name.rsplit('.').next().unwrap_or(&name);
    let first_literal = call.args.first().and_then(string_literal);
    let escapes = first_literal.is_some_and(literal_escapes);

    if name == "open" || name == "io.open" || name == "builtins.open" {
        let mode = call
            .args
            .get(1)
            .or_else(|| keyword(call, "mode"))
            .and_then(string_literal)
            .unwrap_or("r");
        if mode.contains(['w', 'a', 'x', '+']) {
            out.insert(SideEffect::WritesFs);
            if escapes {
                out.insert(SideEffect::WritesFsOutside);
            }
        } else {
            out.insert(SideEffect::ReadsFs);
        }
        return out;
    }

    if READ_CALLS.contains(&last) || READ_DOTTED.contains(&name.as_str()) {
        out.insert(SideEffect::ReadsFs);
    }
    if WRITE_CALLS.contains(&last) || WRITE_DOTTED.contains(&name.as_str()) {
        out.insert(SideEffect::WritesFs);
        let target_escapes = match name.as_str() {
            // Destination is the second argument.
            "shutil.copy" | "shutil.copyfile" | "shutil.copy2" | "shutil.copytree" | "shutil.move"
            | "os.rename" | "os.replace" | "json.dump" | "pickle.dump" | "yaml.dump" | "yaml.safe_dump" => {
                call.args.get(1).and_then(string_literal).is_some_and(literal_escapes)
            }
            _ => escapes,
        };
        if target_escapes {
            out.insert(SideEffect::WritesFsOutside);
        }
    }
    if DELETE_CALLS.contains(&last) || DELETE_DOTTED.contains(&name.as_str()) {
        out.insert(SideEffect::Delete);
    }
    if NETWORK_CALLS.contains(&last) || NETWORK_PREFIXES.iter().any(|p| name.starts_with(p)) {
        out.insert(SideEffect::Network);
    }
    if SUBPROCESS_DOTTED.contains(&name.as_str())
        || SUBPROCESS_PREFIXES.iter().any(|p| name.starts_with(p))
    {
        out.insert(SideEffect::ExecutesSubprocess);
    }
    if last == "commit" {
        out.insert(SideEffect::Commit);
    }
    if PAYMENT_CALLS.contains(&last) || name.starts_with("stripe.") {
        out.insert(SideEffect::Payment);
    }
    out
}

/// Direct effects of a body plus the bare names it calls.
pub fn body_effects(body: &[Stmt]) -> (BTreeSet<SideEffect>, BTreeSet<String>) {
    let mut effects = BTreeSet::new();
    let mut callees = BTreeSet::new();
    walk_stmt_exprs(body, true, &mut |expr| {
        if let Expr::Call(call) = expr {
            effects.extend(call_effects(call));
            if let Expr::Name(name) = call.func.as_ref() {
                callees.insert(name.id.to_string());
            }
        }
    });
    (effects, callees)
}

/// Effects of every top-level function and class in a module, closed over
/// calls between them.
pub fn module_effects(body: &[Stmt]) -> BTreeMap<String, BTreeSet<SideEffect>> {
    let mut direct: BTreeMap<String, (BTreeSet<SideEffect>, BTreeSet<String>)> = BTreeMap::new();
    for stmt in body {
        let (name, inner) = match stmt {
            Stmt::FunctionDef(def) => (def.name.to_string(), def.body.as_slice()),
            Stmt::AsyncFunctionDef(def) => (def.name.to_string(), def.body.as_slice()),
            Stmt::ClassDef(def) => (def.name.to_string(), def.body.as_slice()),
            _ => continue,
        };
        direct.insert(name, body_effects(inner));
    }

    let mut closed: BTreeMap<String, BTreeSet<SideEffect>> =
        direct.iter().map(|(k, (e, _))| (k.clone(), e.clone())).collect();
    loop {
        let mut changed = false;
        for (name, (_, callees)) in &direct {
            let mut acc = closed[name].clone();
            for callee in callees {
                if let Some(more) = closed.get(callee) {
                    acc.extend(more.iter().copied());
                }
            }
            if acc.len() != closed[name].len() {
                closed.insert(name.clone(), acc);
                changed = true;
            }
        }
        if !changed {
            return closed;
        }
    }
}
