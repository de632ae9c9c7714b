use std::collections::{BTreeMap, BTreeSet};
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use super::effects::{module_effects, SideEffect};
use crate::python::syntax::{self, Expr, Stmt};
use crate::python::{docstring, export_list, is_identifier, parse_module, ParsedModule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolKind {
    Function,
    TypeConstructor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    PositionalOnly,
    Positional,
    VarPositional,
    KeywordOnly,
    VarKeyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl Parameter {
    pub fn required(&self) -> bool {
        self.default.is_none()
            && matches!(
                self.kind,
                ParamKind::PositionalOnly | ParamKind::Positional | ParamKind::KeywordOnly
            )
    }

    fn render(&self) -> String {
        let mut out = match self.kind {
            ParamKind::VarPositional => format!("*{}", self.name),
            ParamKind::VarKeyword => format!("**{}", self.name),
            _ => self.name.clone(),
        };
        if let Some(a) = &self.annotation {
            out.push_str(": ");
            out.push_str(a);
        }
        if let Some(d) = &self.default {
            out.push_str(" = ");
            out.push_str(d);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolRecord {
    pub name: String,
    pub kind: SymbolKind,
    #[serde(default)]
    pub is_async: bool,
    pub signature: Vec<Parameter>,
    pub defined_in: String,
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<String>,
    #[serde(default)]
    pub effects: BTreeSet<SideEffect>,
}

impl SymbolRecord {
    pub fn render_signature(&self) -> String {
        let params: Vec<String> = self.signature.iter().map(Parameter::render).collect();
        format!("{}({})", self.name, params.join(", "))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleEntry {
    /// Source file, relative to the repository root.
    pub file: String,
    pub symbols: BTreeMap<String, SymbolRecord>,
    /// Repository modules this module imports.
    #[serde(default)]
    pub imports: BTreeSet<String>,
}

/// Public callables per module, keyed by dotted module path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolTable {
    pub modules: BTreeMap<String, ModuleEntry>,
    /// Every package prefix, including namespace packages without a file.
    #[serde(default)]
    pub packages: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseErrorRecord {
    pub file: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SymbolScan {
    pub table: SymbolTable,
    pub parse_errors: Vec<ParseErrorRecord>,
}

impl SymbolTable {
    pub fn module(&self, path: &str) -> Option<&ModuleEntry> {
        self.modules.get(path)
    }

    /// A module file or a package directory with that dotted path exists.
    pub fn has_module(&self, path: &str) -> bool {
        self.modules.contains_key(path) || self.packages.contains(path)
    }

    pub fn lookup(&self, module: &str, name: &str) -> Option<&SymbolRecord> {
        self.modules.get(module).and_then(|m| m.symbols.get(name))
    }

    pub fn top_level_packages(&self) -> BTreeSet<String> {
        self.modules
            .keys()
            .chain(self.packages.iter())
            .map(|m| m.split('.').next().unwrap_or(m).to_string())
            .collect()
    }

    pub fn symbol_count(&self) -> usize {
        self.modules.values().map(|m| m.symbols.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.symbol_count() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, &SymbolRecord)> {
        self.modules
            .iter()
            .flat_map(|(m, e)| e.symbols.values().map(move |r| (m.as_str(), r)))
    }

    /// Module-level dependency edges (caller, callee), sorted.
    pub fn dependency_edges(&self) -> Vec<(String, String)> {
        let mut edges = BTreeSet::new();
        for (module, entry) in &self.modules {
            for callee in &entry.imports {
                if callee != module {
                    edges.insert((module.clone(), callee.clone()));
                }
            }
        }
        edges.into_iter().collect()
    }

    /// Compact text listing for prompts.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for (module, entry) in &self.modules {
            if entry.symbols.is_empty() {
                continue;
            }
            out.push_str(&format!("module {module} ({})\n", entry.file));
            for record in entry.symbols.values() {
                let kind = match record.kind {
                    SymbolKind::Function if record.is_async => "async def",
                    SymbolKind::Function => "def",
                    SymbolKind::TypeConstructor => "class",
                };
                out.push_str(&format!("  {kind} {}", record.render_signature()));
                if let Some(doc) = &record.doc {
                    out.push_str(&format!("  # {doc}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

const SKIP_DIRS: &[&str] = &[
    "__pycache__", "venv", "env", "build", "dist", "site-packages", "node_modules", "tests",
    "test", "docs", "doc",
];
const SKIP_FILES: &[&str] = &["setup.py", "conftest.py", "noxfile.py"];

/// Dotted module path for a repository-relative `.py` file, if importable.
pub fn module_path_for(rel: &Path) -> Option<String> {
    let mut parts: Vec<String> = Vec::new();
    for component in rel.components() {
        match component {
            Component::Normal(s) => parts.push(s.to_str()?.to_string()),
            _ => return None,
        }
    }
    let file = parts.pop()?;
    let stem = file.strip_suffix(".py")?;
    if stem != "__init__" {
        parts.push(stem.to_string());
    }
    if parts.is_empty() || !parts.iter().all(|p| is_identifier(p)) {
        return None;
    }
    Some(parts.join("."))
}

fn is_skipped_dir(name: &str) -> bool {
    name.starts_with('.') || SKIP_DIRS.contains(&name) || name.ends_with(".egg-info")
}

fn is_skipped_file(name: &str) -> bool {
    SKIP_FILES.contains(&name)
        || name.starts_with("test_")
        || name.ends_with("_test.py")
        || name.starts_with('.')
}

/// Importable Python files under `source`, sorted: (relative path, module path).
pub fn python_sources(source: &Path) -> Vec<(String, String)> {
    let mut found = Vec::new();
    let walker = walkdir::WalkDir::new(source)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0
                || !e.file_type().is_dir()
                || !is_skipped_dir(&e.file_name().to_string_lossy())
        });
    for entry in walker.filter_map(Result::ok) {
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy();
        if !name.ends_with(".py") || is_skipped_file(&name) {
            continue;
        }
        let Ok(rel) = entry.path().strip_prefix(source) else { continue };
        if let Some(module) = module_path_for(rel) {
            found.push((rel.to_string_lossy().replace('\\', "/"), module));
        }
    }
    found
}

struct RawModule {
    file: String,
    is_package: bool,
    defs: BTreeMap<String, SymbolRecord>,
    exports: Option<Vec<String>>,
    /// local name -> (absolute module, original name)
    imported_names: BTreeMap<String, (String, String)>,
    imported_modules: BTreeSet<String>,
}

pub fn build_symbol_table(source: &Path) -> SymbolScan {
    let mut raw: BTreeMap<String, RawModule> = BTreeMap::new();
    let mut parse_errors = Vec::new();

    for (rel, module) in python_sources(source) {
        let bytes = match std::fs::read(source.join(&rel)) {
            Ok(b) => b,
            Err(e) => {
                parse_errors.push(ParseErrorRecord {
                    file: rel,
                    line: 0,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let text = String::from_utf8_lossy(&bytes);
        match parse_module(&text, &rel) {
            Ok(parsed) => {
                let is_package = rel.ends_with("__init__.py");
                raw.insert(module.clone(), scan_module(&parsed, &rel, &module, is_package));
            }
            Err(err) => parse_errors.push(ParseErrorRecord {
                file: rel,
                line: err.line,
                message: err.message,
            }),
        }
    }

    let mut table = SymbolTable::default();
    for module in raw.keys() {
        let parts: Vec<&str> = module.split('.').collect();
        for i in 1..parts.len() {
            table.packages.insert(parts[..i].join("."));
        }
    }
    for (module, entry) in &raw {
        if entry.is_package {
            table.packages.insert(module.clone());
        }
    }

    for (module, entry) in &raw {
        let symbols = match &entry.exports {
            Some(names) => names
                .iter()
                .filter(|n| !n.starts_with('_'))
                .filter_map(|n| resolve(&raw, module, n, 0).map(|r| (n.clone(), renamed(r, n))))
                .collect(),
            None => entry.defs.clone(),
        };
        let mut imports = BTreeSet::new();
        for target in &entry.imported_modules {
            if let Some(repo_module) = repo_module_of(&table, &raw, target) {
                imports.insert(repo_module);
            }
        }
        for (target_module, name) in entry.imported_names.values() {
            let sub = format!("{target_module}.{name}");
            if raw.contains_key(&sub) {
                imports.insert(sub);
            } else if let Some(repo_module) = repo_module_of(&table, &raw, target_module) {
                imports.insert(repo_module);
            }
        }
        table.modules.insert(
            module.clone(),
            ModuleEntry {
                file: entry.file.clone(),
                symbols,
                imports,
            },
        );
    }

    SymbolScan { table, parse_errors }
}

fn renamed(mut record: SymbolRecord, exported_as: &str) -> SymbolRecord {
    record.name = exported_as.to_string();
    record
}

/// Longest repository module that `target` names or lives under.
fn repo_module_of(table: &SymbolTable, raw: &BTreeMap<String, RawModule>, target: &str) -> Option<String> {
    let mut candidate = target.to_string();
    loop {
        if raw.contains_key(&candidate) || table.packages.contains(&candidate) {
            return raw.contains_key(&candidate).then_some(candidate);
        }
        {
            let i = candidate.rfind('.')?;
            candidate.truncate(i)
        }
    }
}

/// Follow re-exports to a repository definition.
fn resolve(raw: &BTreeMap<String, RawModule>, module: &str, name: &str, depth: usize) -> Option<SymbolRecord> {
    if depth > 8 {
        return None;
    }
    let entry = raw.get(module)?;
    if let Some(record) = entry.defs.get(name) {
        return Some(record.clone());
    }
    let (target, original) = entry.imported_names.get(name)?;
    resolve(raw, target, original, depth + 1)
}

fn scan_module(parsed: &ParsedModule, rel: &str, module: &str, is_package: bool) -> RawModule {
    let effects = module_effects(&parsed.body);
    let mut defs = BTreeMap::new();
    let mut imported_names = BTreeMap::new();
    let mut imported_modules = BTreeSet::new();
    let package = if is_package {
        module.to_string()
    } else {
        module.rsplit_once('.').map(|(p, _)| p.to_string()).unwrap_or_default()
    };

    for stmt in &parsed.body {
        match stmt {
            Stmt::FunctionDef(def) => {
                insert_def(&mut defs, parsed, rel, &def.name, false, &def.args, &def.body, stmt, &effects);
            }
            Stmt::AsyncFunctionDef(def) => {
                insert_def(&mut defs, parsed, rel, &def.name, true, &def.args, &def.body, stmt, &effects);
            }
            Stmt::ClassDef(class) => {
                let name = class.name.to_string();
                if name.starts_with('_') {
                    defs.remove(&name);
                    continue;
                }
                defs.insert(
                    name.clone(),
                    SymbolRecord {
                        signature: class_signature(parsed, class),
                        name: name.clone(),
                        kind: SymbolKind::TypeConstructor,
                        is_async: false,
                        defined_in: rel.to_string(),
                        line: parsed.start_line(stmt),
                        doc: first_line(docstring(&class.body)),
                        effects: effects.get(&name).cloned().unwrap_or_default(),
                    },
                );
            }
            Stmt::Import(import) => {
                for alias in &import.names {
                    imported_modules.insert(alias.name.to_string());
                }
            }
            Stmt::ImportFrom(from) => {
                let level = from.level.map_or(0, |l| l.to_u32()) as usize;
                let Some(target) = absolute_module(&package, level, from.module.as_deref()) else {
                    continue;
                };
                imported_modules.insert(target.clone());
                for alias in &from.names {
                    if alias.name.as_str() == "*" {
                        continue;
                    }
                    let local = alias.asname.as_ref().unwrap_or(&alias.name).to_string();
                    imported_names.insert(local, (target.clone(), alias.name.to_string()));
                }
            }
            _ => {}
        }
    }

    RawModule {
        file: rel.to_string(),
        is_package,
        defs,
        exports: export_list(&parsed.body),
        imported_names,
        imported_modules,
    }
}

/// Resolve `from <dots><module> import ...` against the importing package.
pub fn absolute_module(package: &str, level: usize, module: Option<&str>) -> Option<String> {
    if level == 0 {
        return module.map(str::to_string);
    }
    let mut parts: Vec<&str> = if package.is_empty() {
        Vec::new()
    } else {
        package.split('.').collect()
    };
    for _ in 1..level {
        parts.pop()?;
    }
    if let Some(m) = module {
        parts.push(m);
    }
    if parts.is_empty() {
        return None;
    }
    Some(parts.join("."))
}

#[allow(clippy::too_many_arguments)]
fn insert_def(
    defs: &mut BTreeMap<String, SymbolRecord>,
    parsed: &ParsedModule,
    rel: &str,
    name: &syntax::Identifier,
    is_async: bool,
    args: &syntax::Arguments,
    body: &[Stmt],
    stmt: &Stmt,
    effects: &BTreeMap<String, BTreeSet<SideEffect>>,
) {
    let name = name.to_string();
    if name.starts_with('_') {
        // A later private redefinition still shadows an earlier public one.
        defs.remove(&name);
        return;
    }
    defs.insert(
        name.clone(),
        SymbolRecord {
            signature: parameters(parsed, args),
            name: name.clone(),
            kind: SymbolKind::Function,
            is_async,
            defined_in: rel.to_string(),
            line: parsed.start_line(stmt),
            doc: first_line(docstring(body)),
            effects: effects.get(&name).cloned().unwrap_or_default(),
        },
    );
}

fn first_line(doc: Option<String>) -> Option<String> {
    doc.and_then(|d| d.lines().next().map(|l| l.trim().to_string()))
        .filter(|l| !l.is_empty())
}

pub fn parameters(parsed: &ParsedModule, args: &syntax::Arguments) -> Vec<Parameter> {
    let mut out = Vec::new();
    let mut push = |arg: &syntax::Arg, default: Option<&Expr>, kind: ParamKind| {
        out.push(Parameter {
            name: arg.arg.to_string(),
            kind,
            annotation: arg.annotation.as_deref().map(|a| parsed.text_of(a).to_string()),
            default: default.map(|d| parsed.text_of(d).to_string()),
        });
    };
    for a in &args.posonlyargs {
        push(&a.def, a.default.as_deref(), ParamKind::PositionalOnly);
    }
    for a in &args.args {
        push(&a.def, a.default.as_deref(), ParamKind::Positional);
    }
    if let Some(v) = &args.vararg {
        push(v, None, ParamKind::VarPositional);
    }
    for a in &args.kwonlyargs {
        push(&a.def, a.default.as_deref(), ParamKind::KeywordOnly);
    }
    if let Some(k) = &args.kwarg {
        push(k, None, ParamKind::VarKeyword);
    }
    out
}

fn class_signature(parsed: &ParsedModule, class: &syntax::StmtClassDef) -> Vec<Parameter> {
    for stmt in &class.body {
        if let Stmt::FunctionDef(def) = stmt {
            if def.name.as_str() == "__init__" {
                let mut params = parameters(parsed, &def.args);
                if !params.is_empty() {
                    params.remove(0);
                }
                return params;
            }
        }
    }
    let is_dataclass = class.decorator_list.iter().any(|d| {
        let text = parsed.text_of(d);
        text == "dataclass" || text.starts_with("dataclass(") || text.ends_with(".dataclass")
            || text.contains("dataclasses.dataclass")
    });
    if !is_dataclass {
        return Vec::new();
    }
    class
        .body
        .iter()
        .filter_map(|stmt| match stmt {
            Stmt::AnnAssign(field) => match field.target.as_ref() {
                Expr::Name(n) => Some(Parameter {
                    name: n.id.to_string(),
                    kind: ParamKind::Positional,
                    annotation: Some(parsed.text_of(field.annotation.as_ref()).to_string()),
                    default: field.value.as_deref().map(|v| parsed.text_of(v).to_string()),
                }),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, rel: &str, text: &str) {
        let path = dir.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, text).unwrap();
    }

    fn names(table: &SymbolTable, module: &str) -> Vec<String> {
        table.module(module).unwrap().symbols.keys().cloned().collect()
    }

    #[test]
    fn public_top_level_only() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "analytics/core.py",
            "def run_pca(data, n):\n    def inner():\n        pass\n    return data\n\ndef _helper(x):\n    return x\n\nclass Model:\n    def fit(self):\n        pass\n",
        );
        let scan = build_symbol_table(dir.path());
        assert_eq!(names(&scan.table, "analytics.core"), ["Model", "run_pca"]);
        assert!(scan.table.has_module("analytics"));
        let rec = scan.table.lookup("analytics.core", "run_pca").unwrap();
        assert_eq!(rec.render_signature(), "run_pca(data, n)");
        assert_eq!(rec.line, 1);
    }

    #[test]
    fn export_list_restricts_and_reexports() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "pkg/__init__.py", "from .core import fit, unused\nfrom os import path\n__all__ = ['fit', 'path', 'missing']\n");
        write(dir.path(), "pkg/core.py", "__all__ = ['fit']\n\ndef fit(x: int = 2):\n    return x\n\ndef unused():\n    pass\n");
        let scan = build_symbol_table(dir.path());
        assert_eq!(names(&scan.table, "pkg.core"), ["fit"]);
        assert_eq!(names(&scan.table, "pkg"), ["fit"]);
        let rec = scan.table.lookup("pkg", "fit").unwrap();
        assert_eq!(rec.defined_in, "pkg/core.py");
        assert_eq!(rec.signature[0].annotation.as_deref(), Some("int"));
        assert_eq!(rec.signature[0].default.as_deref(), Some("2"));
        assert_eq!(scan.table.dependency_edges(), vec![("pkg".to_string(), "pkg.core".to_string())]);
    }

    #[test]
    fn broken_files_go_to_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "good.py", "def ok():\n    pass\n");
        write(dir.path(), "bad.py", "def broken(:\n");
        let scan = build_symbol_table(dir.path());
        assert_eq!(scan.table.modules.keys().collect::<Vec<_>>(), ["good"]);
        assert_eq!(scan.parse_errors.len(), 1);
        assert_eq!(scan.parse_errors[0].file, "bad.py");
        assert_eq!(scan.parse_errors[0].line, 1);
    }

    #[test]
    fn skips_non_importable_and_hidden() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "gui-launcher.py", "def main():\n    pass\n");
        write(dir.path(), ".hidden/x.py", "def f():\n    pass\n");
        write(dir.path(), "setup.py", "def f():\n    pass\n");
        write(dir.path(), "tests/test_a.py", "def test_a():\n    pass\n");
        write(dir.path(), "ns/mod.py", "def g():\n    pass\n");
        let scan = build_symbol_table(dir.path());
        assert_eq!(scan.table.modules.keys().collect::<Vec<_>>(), ["ns.mod"]);
        assert!(scan.table.has_module("ns"));
    }

    #[test]
    fn class_signature_from_init_and_dataclass() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "m.py",
            "from dataclasses import dataclass\n\nclass A:\n    def __init__(self, a, *, b=1):\n        pass\n\n@dataclass\nclass B:\n    x: int\n    y: float = 0.5\n",
        );
        let table = build_symbol_table(dir.path()).table;
        assert_eq!(table.lookup("m", "A").unwrap().render_signature(), "A(a, b = 1)");
        assert_eq!(table.lookup("m", "B").unwrap().render_signature(), "B(x: int, y: float = 0.5)");
    }

    #[test]
    fn relative_imports_resolve() {
        assert_eq!(absolute_module("a.b", 1, Some("c")).as_deref(), Some("a.b.c"));
        assert_eq!(absolute_module("a.b", 2, None).as_deref(), Some("a"));
        assert_eq!(absolute_module("a", 3, Some("x")), None);
        assert_eq!(absolute_module("", 0, Some("os")).as_deref(), Some("os"));
    }

    #[test]
    fn module_paths() {
        assert_eq!(module_path_for(Path::new("a/b/__init__.py")).as_deref(), Some("a.b"));
        assert_eq!(module_path_for(Path::new("a/b.py")).as_deref(), Some("a.b"));
        assert_eq!(module_path_for(Path::new("__init__.py")), None);
        assert_eq!(module_path_for(Path::new("my-pkg/b.py")), None);
    }
}
