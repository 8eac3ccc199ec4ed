use super::ast::*;
use super::FrontendError;

/// Prefix for names introduced by desugaring. User programs should not use it.
pub const RESERVED_PREFIX: &str = "__";

/// Rewrite sugar into the core forms accepted by lowering:
/// `for` becomes `while` with an explicit induction variable, compound
/// assignment becomes plain assignment, and prefix operators become calls
/// to the `neg`/`not` primitives. Chained comparisons are rejected.
pub fn desugar(program: &Program) -> Result<Program, FrontendError> {
    let functions = program
        .functions
        .iter()
        .map(|f| {
            Ok(FunctionAst {
                name: f.name.clone(),
                params: f.params.clone(),
                ret: f.ret,
                body: block(&f.body)?,
            })
        })
        .collect::<Result<_, FrontendError>>()?;
    Ok(Program { functions })
}

fn block(stmts: &[Stmt]) -> Result<Block, FrontendError> {
    stmts.iter().map(stmt).collect()
}

fn stmt(s: &Stmt) -> Result<Stmt, FrontendError> {
    Ok(match s {
        Stmt::Let { name, value } => Stmt::Let {
            name: name.clone(),
            value: expr(value)?,
        },
        Stmt::Assign { name, value } => Stmt::Assign {
            name: name.clone(),
            value: expr(value)?,
        },
        Stmt::CompoundAssign { name, op, value } => Stmt::Assign {
            name: name.clone(),
            value: Expr::Binary {
                op: *op,
                lhs: Box::new(Expr::Var(name.clone())),
                rhs: Box::new(expr(value)?),
            },
        },
        Stmt::If { cond, then, els } => Stmt::If {
            cond: expr(cond)?,
            then: block(then)?,
            els: els.as_deref().map(block).transpose()?,
        },
        Stmt::While { cond, body } => Stmt::While {
            cond: expr(cond)?,
            body: block(body)?,
        },
        Stmt::For {
            var,
            start,
            end,
            body,
        } => {
            let end_name = format!("{RESERVED_PREFIX}end_{var}");
            let mut loop_body = block(body)?;
            loop_body.push(Stmt::Assign {
                name: var.clone(),
                value: Expr::Binary {
                    op: BinOp::Add,
                    lhs: Box::new(Expr::Var(var.clone())),
                    rhs: Box::new(Expr::Int(1)),
                },
            });
            Stmt::Block(vec![
                Stmt::Let {
                    name: var.clone(),
                    value: expr(start)?,
                },
                Stmt::Let {
                    name: end_name.clone(),
                    value: expr(end)?,
                },
                Stmt::While {
                    cond: Expr::Binary {
                        op: BinOp::Le,
                        lhs: Box::new(Expr::Var(var.clone())),
                        rhs: Box::new(Expr::Var(end_name)),
                    },
                    body: loop_body,
                },
            ])
        }
        Stmt::Return(e) => Stmt::Return(expr(e)?),
        Stmt::Expr(e) => Stmt::Expr(expr(e)?),
        Stmt::Print(args) => Stmt::Print(
            args.iter()
                .map(|a| match a {
                    PrintArg::Text(t) => Ok(PrintArg::Text(t.clone())),
                    PrintArg::Value(e) => Ok(PrintArg::Value(expr(e)?)),
                })
                .collect::<Result<_, FrontendError>>()?,
        ),
        Stmt::Block(b) => Stmt::Block(block(b)?),
    })
}

fn expr(e: &Expr) -> Result<Expr, FrontendError> {
    Ok(match e {
        Expr::Real(_) | Expr::Int(_) | Expr::Bool(_) | Expr::Var(_) => e.clone(),
        Expr::Unary { op, expr: inner } => Expr::Call {
            callee: match op {
                UnOp::Neg => "neg",
                UnOp::Not => "not",
            }
            .to_string(),
            args: vec![expr(inner)?],
        },
        Expr::Binary { op, lhs, rhs } => {
            if op.is_comparison() && (is_comparison(lhs) || is_comparison(rhs)) {
                return Err(FrontendError::Desugar {
                    message: format!("chained comparison with '{}' is not supported", op.symbol()),
                });
            }
            Expr::Binary {
                op: *op,
                lhs: Box::new(expr(lhs)?),
                rhs: Box::new(expr(rhs)?),
            }
        }
        Expr::Call { callee, args } => Expr::Call {
            callee: callee.clone(),
            args: args.iter().map(expr).collect::<Result<_, _>>()?,
        },
    })
}

fn is_comparison(e: &Expr) -> bool {
    matches!(e, Expr::Binary { op, .. } if op.is_comparison())
}
