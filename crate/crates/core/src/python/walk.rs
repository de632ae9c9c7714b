use rustpython_parser::ast::{self, Expr, Stmt};

/// Pre-order traversal of an expression and all of its sub-expressions.
pub fn walk_expr<'a>(expr: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
    f(expr);
    match expr {
        Expr::BoolOp(e) => e.values.iter().for_each(|v| walk_expr(v, f)),
        Expr::NamedExpr(e) => {
            walk_expr(&e.target, f);
            walk_expr(&e.value, f);
        }
        Expr::BinOp(e) => {
            walk_expr(&e.left, f);
            walk_expr(&e.right, f);
        }
        Expr::UnaryOp(e) => walk_expr(&e.operand, f),
        Expr::Lambda(e) => {
            walk_arguments(&e.args, f);
            walk_expr(&e.body, f);
        }
        Expr::IfExp(e) => {
            walk_expr(&e.test, f);
            walk_expr(&e.body, f);
            walk_expr(&e.orelse, f);
        }
        Expr::Dict(e) => {
            e.keys.iter().flatten().for_each(|k| walk_expr(k, f));
            e.values.iter().for_each(|v| walk_expr(v, f));
        }
        Expr::Set(e) => e.elts.iter().for_each(|v| walk_expr(v, f)),
        Expr::ListComp(e) => {
            walk_expr(&e.elt, f);
            walk_comprehensions(&e.generators, f);
        }
        Expr::SetComp(e) => {
            walk_expr(&e.elt, f);
            walk_comprehensions(&e.generators, f);
        }
        Expr::DictComp(e) => {
            walk_expr(&e.key, f);
            walk_expr(&e.value, f);
            walk_comprehensions(&e.generators, f);
        }
        Expr::GeneratorExp(e) => {
            walk_expr(&e.elt, f);
            walk_comprehensions(&e.generators, f);
        }
        Expr::Await(e) => walk_expr(&e.value, f),
        Expr::Yield(e) => {
            if let Some(v) = &e.value {
                walk_expr(v, f);
            }
        }
        Expr::YieldFrom(e) => walk_expr(&e.value, f),
        Expr::Compare(e) => {
            walk_expr(&e.left, f);
            e.comparators.iter().for_each(|v| walk_expr(v, f));
        }
        Expr::Call(e) => {
            walk_expr(&e.func, f);
            e.args.iter().for_each(|v| walk_expr(v, f));
            e.keywords.iter().for_each(|k| walk_expr(&k.value, f));
        }
        Expr::FormattedValue(e) => {
            walk_expr(&e.value, f);
            if let Some(spec) = &e.format_spec {
                walk_expr(spec, f);
            }
        }
        Expr::JoinedStr(e) => e.values.iter().for_each(|v| walk_expr(v, f)),
        Expr::Constant(_) | Expr::Name(_) => {}
        Expr::Attribute(e) => walk_expr(&e.value, f),
        Expr::Subscript(e) => {
            walk_expr(&e.value, f);
            walk_expr(&e.slice, f);
        }
        Expr::Starred(e) => walk_expr(&e.value, f),
        Expr::List(e) => e.elts.iter().for_each(|v| walk_expr(v, f)),
        Expr::Tuple(e) => e.elts.iter().for_each(|v| walk_expr(v, f)),
        Expr::Slice(e) => {
            for part in [&e.lower, &e.upper, &e.step].into_iter().flatten() {
                walk_expr(part, f);
            }
        }
    }
}

fn walk_comprehensions<'a>(gens: &'a [ast::Comprehension], f: &mut dyn FnMut(&'a Expr)) {
    for g in gens {
        walk_expr(&g.target, f);
        walk_expr(&g.iter, f);
        g.ifs.iter().for_each(|v| walk_expr(v, f));
    }
}

fn walk_arguments<'a>(args: &'a ast::Arguments, f: &mut dyn FnMut(&'a Expr)) {
    for arg in args.posonlyargs.iter().chain(&args.args).chain(&args.kwonlyargs) {
        if let Some(default) = &arg.default {
            walk_expr(default, f);
        }
    }
}

/// Visit every statement in `body`, recursing into compound statements.
/// Nested function and class bodies are entered only when `descend_defs`.
pub fn walk_body<'a>(body: &'a [Stmt], descend_defs: bool, f: &mut dyn FnMut(&'a Stmt)) {
    for stmt in body {
        f(stmt);
        for child in child_bodies(stmt, descend_defs) {
            walk_body(child, descend_defs, f);
        }
    }
}

fn child_bodies(stmt: &Stmt, descend_defs: bool) -> Vec<&[Stmt]> {
    match stmt {
        Stmt::FunctionDef(s) if descend_defs => vec![&s.body],
        Stmt::AsyncFunctionDef(s) if descend_defs => vec![&s.body],
        Stmt::ClassDef(s) if descend_defs => vec![&s.body],
        Stmt::For(s) => vec![&s.body, &s.orelse],
        Stmt::AsyncFor(s) => vec![&s.body, &s.orelse],
        Stmt::While(s) => vec![&s.body, &s.orelse],
        Stmt::If(s) => vec![&s.body, &s.orelse],
        Stmt::With(s) => vec![&s.body],
        Stmt::AsyncWith(s) => vec![&s.body],
        Stmt::Match(s) => s.cases.iter().map(|c| c.body.as_slice()).collect(),
        Stmt::Try(s) => try_bodies(&s.body, &s.handlers, &s.orelse, &s.finalbody),
        Stmt::TryStar(s) => try_bodies(&s.body, &s.handlers, &s.orelse, &s.finalbody),
        _ => Vec::new(),
    }
}

fn try_bodies<'a>(
    body: &'a [Stmt],
    handlers: &'a [ast::ExceptHandler],
    orelse: &'a [Stmt],
    finalbody: &'a [Stmt],
) -> Vec<&'a [Stmt]> {
    let mut out = vec![body];
    for handler in handlers {
        let ast::ExceptHandler::ExceptHandler(h) = handler;
        out.push(&h.body);
    }
    out.push(orelse);
    out.push(finalbody);
    out
}

/// Visit every expression owned directly by `stmt` (not by nested statements).
fn stmt_own_exprs<'a>(stmt: &'a Stmt, f: &mut dyn FnMut(&'a Expr)) {
    match stmt {
        Stmt::FunctionDef(s) => {
            s.decorator_list.iter().for_each(|d| walk_expr(d, f));
            walk_arguments(&s.args, f);
        }
        Stmt::AsyncFunctionDef(s) => {
            s.decorator_list.iter().for_each(|d| walk_expr(d, f));
            walk_arguments(&s.args, f);
        }
        Stmt::ClassDef(s) => {
            s.decorator_list.iter().for_each(|d| walk_expr(d, f));
            s.bases.iter().for_each(|b| walk_expr(b, f));
            s.keywords.iter().for_each(|k| walk_expr(&k.value, f));
        }
        Stmt::Return(s) => {
            if let Some(v) = &s.value {
                walk_expr(v, f);
            }
        }
        Stmt::Delete(s) => s.targets.iter().for_each(|t| walk_expr(t, f)),
        Stmt::Assign(s) => {
            s.targets.iter().for_each(|t| walk_expr(t, f));
            walk_expr(&s.value, f);
        }
        Stmt::TypeAlias(s) => walk_expr(&s.value, f),
        Stmt::AugAssign(s) => {
            walk_expr(&s.target, f);
            walk_expr(&s.value, f);
        }
        Stmt::AnnAssign(s) => {
            walk_expr(&s.target, f);
            if let Some(v) = &s.value {
                walk_expr(v, f);
            }
        }
        Stmt::For(s) => {
            walk_expr(&s.target, f);
            walk_expr(&s.iter, f);
        }
        Stmt::AsyncFor(s) => {
            walk_expr(&s.target, f);
            walk_expr(&s.iter, f);
        }
        Stmt::While(s) => walk_expr(&s.test, f),
        Stmt::If(s) => walk_expr(&s.test, f),
        Stmt::With(s) => s.items.iter().for_each(|i| {
            walk_expr(&i.context_expr, f);
            if let Some(v) = &i.optional_vars {
                walk_expr(v, f);
            }
        }),
        Stmt::AsyncWith(s) => s.items.iter().for_each(|i| {
            walk_expr(&i.context_expr, f);
            if let Some(v) = &i.optional_vars {
                walk_expr(v, f);
            }
        }),
        Stmt::Match(s) => {
            walk_expr(&s.subject, f);
            for case in &s.cases {
                if let Some(guard) = &case.guard {
                    walk_expr(guard, f);
                }
            }
        }
        Stmt::Raise(s) => {
            for part in [&s.exc, &s.cause].into_iter().flatten() {
                walk_expr(part, f);
            }
        }
        Stmt::Try(s) => try_handler_exprs(&s.handlers, f),
        Stmt::TryStar(s) => try_handler_exprs(&s.handlers, f),
        Stmt::Assert(s) => {
            walk_expr(&s.test, f);
            if let Some(msg) = &s.msg {
                walk_expr(msg, f);
            }
        }
        Stmt::Expr(s) => walk_expr(&s.value, f),
        Stmt::Import(_)
        | Stmt::ImportFrom(_)
        | Stmt::Global(_)
        | Stmt::Nonlocal(_)
        | Stmt::Pass(_)
        | Stmt::Break(_)
        | Stmt::Continue(_) => {}
    }
}

fn try_handler_exprs<'a>(handlers: &'a [ast::ExceptHandler], f: &mut dyn FnMut(&'a Expr)) {
    for handler in handlers {
        let ast::ExceptHandler::ExceptHandler(h) = handler;
        if let Some(t) = &h.type_ {
            walk_expr(t, f);
        }
    }
}

/// Every expression reachable from `body`; nested def/class bodies only when
/// `descend_defs`.
pub fn walk_stmt_exprs<'a>(body: &'a [Stmt], descend_defs: bool, f: &mut dyn FnMut(&'a Expr)) {
    walk_body(body, descend_defs, &mut |stmt| stmt_own_exprs(stmt, f));
}
