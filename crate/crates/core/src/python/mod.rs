//! Thin layer over the Python syntax tree.
//!
//! Every static pass in the crate (symbol extraction, import validation,
//! bundle shape checks, security scans) goes through [`ParsedModule`] so that
//! line numbers and source slices are computed the same way everywhere.

mod walk;

pub use walk::{walk_body, walk_expr, walk_stmt_exprs};

use rustpython_parser::ast::{self, Constant, Expr, Ranged, Stmt};
use rustpython_parser::text_size::{TextRange, TextSize};
use rustpython_parser::Parse;

pub use rustpython_parser::ast as syntax;

/// A parse failure, reported with a 1-based line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub message: String,
    pub line: usize,
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Byte offset to line lookup.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    pub fn new(source: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(source.match_indices('\n').map(|(i, _)| i + 1));
        Self { starts }
    }

    /// 1-based line containing `offset`.
    pub fn line(&self, offset: usize) -> usize {
        match self.starts.binary_search(&offset) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }
}

/// A parsed Python source file.
pub struct ParsedModule {
    pub source: String,
    pub body: Vec<Stmt>,
    lines: LineIndex,
}

impl std::fmt::Debug for ParsedModule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParsedModule")
            .field("statements", &self.body.len())
            .finish()
    }
}

pub fn parse_module(source: &str, path: &str) -> Result<ParsedModule, ParseFailure> {
    let lines = LineIndex::new(source);
    match ast::Suite::parse(source, path) {
        Ok(body) => Ok(ParsedModule {
            source: source.to_string(),
            body,
            lines,
        }),
        Err(err) => Err(ParseFailure {
            message: err.error.to_string(),
            line: lines.line(usize::from(err.offset)),
        }),
    }
}

impl ParsedModule {
    pub fn line_at(&self, offset: TextSize) -> usize {
        self.lines.line(usize::from(offset))
    }

    /// First line of a node.
    pub fn start_line<T: Ranged>(&self, node: &T) -> usize {
        self.line_at(node.range().start())
    }

    /// Last line of a node (inclusive).
    pub fn end_line<T: Ranged>(&self, node: &T) -> usize {
        let end = usize::from(node.range().end());
        self.lines.line(end.saturating_sub(1).max(usize::from(node.range().start())))
    }

    pub fn slice(&self, range: TextRange) -> &str {
        &self.source[usize::from(range.start())..usize::from(range.end())]
    }

    pub fn text_of<T: Ranged>(&self, node: &T) -> &str {
        self.slice(node.range())
    }
}

/// `a.b.c` for a chain of attribute accesses rooted at a name.
pub fn dotted_name(expr: &Expr) -> Option<String> {
    match expr {
        Expr::Name(name) => Some(name.id.to_string()),
        Expr::Attribute(attr) => {
            dotted_name(&attr.value).map(|base| format!("{base}.{}", attr.attr))
        }
        _ => None,
    }
}

/// The called name of a call expression: dotted when possible, otherwise the
/// final attribute (`obj().write_text` yields `write_text`).
pub fn callee_name(call: &ast::ExprCall) -> Option<String> {
    dotted_name(&call.func).or_else(|| match call.func.as_ref() {
        Expr::Attribute(attr) => Some(attr.attr.to_string()),
        _ => None,
    })
}

pub fn string_literal(expr: &Expr) -> Option<&str> {
    match expr {
        Expr::Constant(c) => match &c.value {
            Constant::Str(s) => Some(s.as_str()),
            _ => None,
        },
        _ => None,
    }
}

pub fn is_constant(expr: &Expr) -> bool {
    matches!(expr, Expr::Constant(_))
}

pub fn keyword<'a>(call: &'a ast::ExprCall, name: &str) -> Option<&'a Expr> {
    call.keywords
        .iter()
        .find(|k| k.arg.as_ref().map(|a| a.as_str()) == Some(name))
        .map(|k| &k.value)
}

/// Leading docstring of a body, if any.
pub fn docstring(body: &[Stmt]) -> Option<String> {
    match body.first() {
        Some(Stmt::Expr(expr)) => string_literal(&expr.value).map(|s| s.trim().to_string()),
        _ => None,
    }
}

/// `__all__ = [...]` at module level, when every element is a string literal.
pub fn export_list(body: &[Stmt]) -> Option<Vec<String>> {
    let mut found: Option<Vec<String>> = None;
    for stmt in body {
        let (targets, value): (Vec<&Expr>, &Expr) = match stmt {
            Stmt::Assign(assign) => (assign.targets.iter().collect(), &assign.value),
            Stmt::AnnAssign(assign) => match &assign.value {
                Some(value) => (vec![assign.target.as_ref()], value.as_ref()),
                None => continue,
            },
            Stmt::AugAssign(aug) => {
                let is_all = matches!(aug.target.as_ref(), Expr::Name(n) if n.id.as_str() == "__all__");
                if is_all {
                    if let (Some(existing), Some(more)) = (found.as_mut(), literal_strings(&aug.value)) {
                        existing.extend(more);
                    }
                }
                continue;
            }
            _ => continue,
        };
        let is_all = targets
            .iter()
            .any(|t| matches!(t, Expr::Name(n) if n.id.as_str() == "__all__"));
        if is_all {
            found = literal_strings(value);
        }
    }
    found
}

fn literal_strings(expr: &Expr) -> Option<Vec<String>> {
    let elts = match expr {
        Expr::List(list) => &list.elts,
        Expr::Tuple(tuple) => &tuple.elts,
        _ => return None,
    };
    elts.iter()
        .map(|e| string_literal(e).map(str::to_string))
        .collect()
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_alphanumeric()) && !is_keyword(name)
}

fn is_keyword(name: &str) -> bool {
    const KEYWORDS: &[&str] = &[
        "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
        "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
        "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise",
        "return", "try", "while", "with", "yield",
    ];
    KEYWORDS.contains(&name)
}

/// Render a JSON value as an equivalent Python literal.
pub fn python_literal(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => serde_json::to_string(s).unwrap_or_default(),
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(python_literal).collect();
            format!("[{}]", inner.join(", "))
        }
        Value::Object(map) => {
            let inner: Vec<String> = map
                .iter()
                .map(|(k, v)| {
                    format!(
                        "{}: {}",
                        serde_json::to_string(k).unwrap_or_default(),
                        python_literal(v)
                    )
                })
                .collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}
