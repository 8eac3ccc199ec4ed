use std::fmt::Write;

use super::ast::*;

/// Render a program back to source text that reparses to the same tree.
pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    for (i, f) in program.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let params: Vec<String> = f
            .params
            .iter()
            .map(|p| match p.kind {
                Some(k) => format!("{}: {}", p.name, k),
                None => p.name.clone(),
            })
            .collect();
        write!(out, "fn {}({})", f.name, params.join(", ")).unwrap();
        if let Some(k) = f.ret {
            write!(out, " -> {k}").unwrap();
        }
        out.push(' ');
        block(&mut out, &f.body, 0);
        out.push('\n');
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn block(out: &mut String, stmts: &[Stmt], depth: usize) {
    out.push_str("{\n");
    for s in stmts {
        indent(out, depth + 1);
        stmt(out, s, depth + 1);
        out.push('\n');
    }
    indent(out, depth);
    out.push('}');
}

fn stmt(out: &mut String, s: &Stmt, depth: usize) {
    match s {
        Stmt::Let { name, value } => write!(out, "let {name} = {};", expr_str(value)).unwrap(),
        Stmt::Assign { name, value } => write!(out, "{name} = {};", expr_str(value)).unwrap(),
        Stmt::CompoundAssign { name, op, value } => {
            write!(out, "{name} {}= {};", op.symbol(), expr_str(value)).unwrap()
        }
        Stmt::If { cond, then, els } => {
            write!(out, "if {} ", expr_str(cond)).unwrap();
            block(out, then, depth);
            if let Some(els) = els {
                out.push_str(" else ");
                block(out, els, depth);
            }
        }
        Stmt::While { cond, body } => {
            write!(out, "while {} ", expr_str(cond)).unwrap();
            block(out, body, depth);
        }
        Stmt::For {
            var,
            start,
            end,
            body,
        } => {
            write!(out, "for {var} in {}:{} ", expr_str(start), expr_str(end)).unwrap();
            block(out, body, depth);
        }
        Stmt::Return(e) => write!(out, "return {};", expr_str(e)).unwrap(),
        Stmt::Expr(e) => write!(out, "{};", expr_str(e)).unwrap(),
        Stmt::Print(args) => {
            let parts: Vec<String> = args
                .iter()
                .map(|a| match a {
                    PrintArg::Text(t) => format!("\"{t}\""),
                    PrintArg::Value(e) => expr_str(e),
                })
                .collect();
            write!(out, "println({});", parts.join(", ")).unwrap();
        }
        Stmt::Block(b) => block(out, b, depth),
    }
}

pub fn expr_str(e: &Expr) -> String {
    let mut s = String::new();
    expr(&mut s, e);
    s
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { .. } => UNARY_PRECEDENCE,
        _ => u8::MAX,
    }
}

fn child(out: &mut String, e: &Expr, needs_parens: bool) {
    if needs_parens {
        out.push('(');
        expr(out, e);
        out.push(')');
    } else {
        expr(out, e);
    }
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Real(v) => write!(out, "{v:?}").unwrap(),
        Expr::Int(v) => write!(out, "{v}").unwrap(),
        Expr::Bool(v) => write!(out, "{v}").unwrap(),
        Expr::Var(n) => out.push_str(n),
        Expr::Unary { op, expr: inner } => {
            out.push(match op {
                UnOp::Neg => '-',
                UnOp::Not => '!',
            });
            child(out, inner, precedence(inner) < UNARY_PRECEDENCE);
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            let right_assoc = *op == BinOp::Pow;
            let lp = precedence(lhs);
            let rp = precedence(rhs);
            child(out, lhs, lp < p || (right_assoc && lp == p));
            write!(out, " {} ", op.symbol()).unwrap();
            // A prefix operator on the right is always unambiguous.
            let rhs_unary = matches!(**rhs, Expr::Unary { .. });
            child(out, rhs, !rhs_unary && (rp < p || (!right_assoc && rp == p)));
        }
        Expr::Call { callee, args } => {
            out.push_str(callee);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr(out, a);
            }
            out.push(')');
        }
    }
}
