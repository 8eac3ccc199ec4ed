use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{Instr, IrFunction, IrModule, Kind, Literal, PrimOp, PrintPart, Region, VarId};
use crate::frontend::ast::{BinOp, Expr, FunctionAst, PrintArg, Program, Stmt};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LowerError {
    #[error("in function '{function}': unresolved variable '{name}'")]
    Unresolved { function: String, name: String },
    #[error("in function '{function}': unknown function '{name}'")]
    UnknownFunction { function: String, name: String },
    #[error("in function '{function}': {message}")]
    Kind { function: String, message: String },
    #[error("in function '{function}': {message}")]
    Unsupported { function: String, message: String },
    #[error("duplicate function '{0}'")]
    DuplicateFunction(String),
    #[error("function '{0}' has the name of a builtin")]
    ReservedName(String),
}

impl LowerError {
    /// The offending symbol, when the error is about one.
    pub fn symbol(&self) -> Option<&str> {
        match self {
            LowerError::Unresolved { name, .. } | LowerError::UnknownFunction { name, .. } => {
                Some(name)
            }
            LowerError::DuplicateFunction(n) | LowerError::ReservedName(n) => Some(n),
            _ => None,
        }
    }
}

// Pseudo-variables used by the early-return encoding. `%` cannot start a source identifier.
const DONE: &str = "%done";
const RET: &str = "%ret";

struct Sig {
    params: Vec<Kind>,
    ret: Kind,
}

/// Lower a desugared program to IR.
pub fn lower(program: &Program) -> Result<IrModule, LowerError> {
    let mut sigs = HashMap::new();
    for f in &program.functions {
        if PrimOp::from_name(&f.name).is_some() || f.name == "println" {
            return Err(LowerError::ReservedName(f.name.clone()));
        }
        let sig = Sig {
            params: f.params.iter().map(|p| p.kind.unwrap_or(Kind::Real)).collect(),
            ret: f.ret.unwrap_or(Kind::Real),
        };
        if sigs.insert(f.name.clone(), sig).is_some() {
            return Err(LowerError::DuplicateFunction(f.name.clone()));
        }
    }
    let functions = program
        .functions
        .iter()
        .map(|f| lower_function(f, &sigs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IrModule::new(functions))
}

type Scope = Vec<(String, VarId)>;

#[derive(Clone, Debug, Default)]
struct Env {
    scopes: Vec<Scope>,
}

impl Env {
    fn position(&self, name: &str) -> Option<(usize, usize)> {
        for (si, scope) in self.scopes.iter().enumerate().rev() {
            if let Some(pi) = scope.iter().position(|(n, _)| n == name) {
                return Some((si, pi));
            }
        }
        None
    }

    fn lookup(&self, name: &str) -> Option<VarId> {
        self.position(name).map(|(si, pi)| self.scopes[si][pi].1)
    }

    fn assign(&mut self, name: &str, v: VarId) -> bool {
        match self.position(name) {
            Some((si, pi)) => {
                self.scopes[si][pi].1 = v;
                true
            }
            None => false,
        }
    }

    fn declare(&mut self, name: &str, v: VarId) {
        let scope = self.scopes.last_mut().expect("at least one scope");
        match scope.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => entry.1 = v,
            None => scope.push((name.to_string(), v)),
        }
    }

    fn push(&mut self) {
        self.scopes.push(Vec::new());
    }

    fn pop(&mut self) {
        self.scopes.pop();
    }

    /// Positions of all bindings that are not shadowed by an inner scope.
    fn visible(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (si, scope) in self.scopes.iter().enumerate() {
            for (pi, (name, _)) in scope.iter().enumerate() {
                if self.position(name) == Some((si, pi)) {
                    out.push((si, pi));
                }
            }
        }
        out
    }

    fn at(&self, pos: (usize, usize)) -> &(String, VarId) {
        &self.scopes[pos.0][pos.1]
    }

    fn set(&mut self, pos: (usize, usize), v: VarId) {
        self.scopes[pos.0][pos.1].1 = v;
    }
}

struct FnLowerer<'a> {
    sigs: &'a HashMap<String, Sig>,
    name: &'a str,
    kinds: Vec<Kind>,
    flag_mode: bool,
    ret_kind: Kind,
}

fn lower_function(f: &FunctionAst, sigs: &HashMap<String, Sig>) -> Result<IrFunction, LowerError> {
    let ret_kind = f.ret.unwrap_or(Kind::Real);
    let mut lw = FnLowerer {
        sigs,
        name: &f.name,
        kinds: Vec::new(),
        flag_mode: needs_done_flag(&f.body),
        ret_kind,
    };
    let mut env = Env::default();
    env.push();
    let mut params = Vec::new();
    for p in &f.params {
        if env.scopes[0].iter().any(|(n, _)| *n == p.name) {
            return Err(lw.unsupported(format!("duplicate parameter '{}'", p.name)));
        }
        let v = lw.new_var(p.kind.unwrap_or(Kind::Real));
        env.declare(&p.name, v);
        params.push(v);
    }
    if !always_returns(&f.body) {
        return Err(lw.unsupported("control can reach the end of the function without a return".into()));
    }
    let mut instrs = Vec::new();
    if lw.flag_mode {
        let zero = match ret_kind {
            Kind::Real => Literal::Real(0.0),
            Kind::Int => Literal::Int(0),
            Kind::Bool => Literal::Bool(false),
            Kind::Vec => {
                return Err(lw.unsupported("early return from a vec-valued function".into()))
            }
        };
        let done = lw.constant(Literal::Bool(false), Kind::Bool, &mut instrs);
        let ret = lw.constant(zero, ret_kind, &mut instrs);
        env.declare(DONE, done);
        env.declare(RET, ret);
    }
    lw.stmts(&f.body, &mut env, &mut instrs)?;
    let result = env.lookup(RET).expect("always_returns guarantees a result");
    Ok(IrFunction {
        name: f.name.clone(),
        params,
        body: Region {
            instrs,
            yields: vec![result],
        },
        kinds: lw.kinds,
    })
}

fn contains_return(s: &Stmt) -> bool {
    match s {
        Stmt::Return(_) => true,
        Stmt::If { then, els, .. } => {
            then.iter().any(contains_return) || els.iter().flatten().any(contains_return)
        }
        Stmt::While { body, .. } | Stmt::For { body, .. } | Stmt::Block(body) => {
            body.iter().any(contains_return)
        }
        _ => false,
    }
}

fn needs_done_flag(body: &[Stmt]) -> bool {
    match body.split_last() {
        Some((Stmt::Return(_), rest)) => rest.iter().any(contains_return),
        _ => true,
    }
}

fn always_returns(stmts: &[Stmt]) -> bool {
    stmts.iter().any(|s| match s {
        Stmt::Return(_) => true,
        Stmt::If {
            then,
            els: Some(els),
            ..
        } => always_returns(then) && always_returns(els),
        Stmt::Block(b) => always_returns(b),
        _ => false,
    })
}

/// Names assigned in `stmts` that refer to bindings outside of it.
fn assigned_outer(stmts: &[Stmt], shadow: &mut HashSet<String>, out: &mut Vec<String>) {
    for s in stmts {
        match s {
            Stmt::Let { name, .. } => {
                shadow.insert(name.clone());
            }
            Stmt::Assign { name, .. } | Stmt::CompoundAssign { name, .. } => {
                if !shadow.contains(name) && !out.contains(name) {
                    out.push(name.clone());
                }
            }
            Stmt::If { then, els, .. } => {
                assigned_outer(then, &mut shadow.clone(), out);
                if let Some(els) = els {
                    assigned_outer(els, &mut shadow.clone(), out);
                }
            }
            Stmt::While { body, .. } | Stmt::Block(body) => {
                assigned_outer(body, &mut shadow.clone(), out)
            }
            Stmt::For { var, body, .. } => {
                let mut inner = shadow.clone();
                inner.insert(var.clone());
                assigned_outer(body, &mut inner, out)
            }
            Stmt::Return(_) => {
                for n in [DONE, RET] {
                    if !out.iter().any(|o| o == n) {
                        out.push(n.to_string());
                    }
                }
            }
            Stmt::Expr(_) | Stmt::Print(_) => {}
        }
    }
}

impl<'a> FnLowerer<'a> {
    fn new_var(&mut self, kind: Kind) -> VarId {
        self.kinds.push(kind);
        VarId((self.kinds.len() - 1) as u32)
    }

    fn kind(&self, v: VarId) -> Kind {
        self.kinds[v.index()]
    }

    fn unsupported(&self, message: String) -> LowerError {
        LowerError::Unsupported {
            function: self.name.to_string(),
            message,
        }
    }

    fn kind_error(&self, message: String) -> LowerError {
        LowerError::Kind {
            function: self.name.to_string(),
            message,
        }
    }

    fn constant(&mut self, value: Literal, kind: Kind, out: &mut Vec<Instr>) -> VarId {
        let dst = self.new_var(kind);
        out.push(Instr::Const { dst, value });
        dst
    }

    fn prim(&mut self, op: PrimOp, args: Vec<VarId>, out: &mut Vec<Instr>) -> Result<VarId, LowerError> {
        let kinds: Vec<Kind> = args.iter().map(|a| self.kind(*a)).collect();
        let Some(kind) = op.result_kind(&kinds) else {
            let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
            return Err(self.kind_error(format!(
                "'{}' cannot be applied to ({})",
                op.name(),
                names.join(", ")
            )));
        };
        let dst = self.new_var(kind);
        out.push(Instr::Prim { dst, op, args });
        Ok(dst)
    }

    /// Convert `v` to `target`, promoting int to real where needed.
    fn coerce(&mut self, v: VarId, target: Kind, what: &str, out: &mut Vec<Instr>) -> Result<VarId, LowerError> {
        let k = self.kind(v);
        if k == target {
            Ok(v)
        } else if k == Kind::Int && target == Kind::Real {
            self.prim(PrimOp::ToReal, vec![v], out)
        } else {
            Err(self.kind_error(format!("{what} has kind {k}, expected {target}")))
        }
    }

    fn stmts(&mut self, stmts: &[Stmt], env: &mut Env, out: &mut Vec<Instr>) -> Result<(), LowerError> {
        for (i, s) in stmts.iter().enumerate() {
            if let Stmt::Return(e) = s {
                // Anything after a return in the same block is dead.
                return self.ret(e, env, out);
            }
            self.stmt(s, env, out)?;
            if self.flag_mode && contains_return(s) && i + 1 < stmts.len() {
                let done = env.lookup(DONE).expect("flag mode declares done");
                return self.branches(done, &[], &stmts[i + 1..], env, out);
            }
        }
        Ok(())
    }

    fn ret(&mut self, e: &Expr, env: &mut Env, out: &mut Vec<Instr>) -> Result<(), LowerError> {
        let v = self.expr(e, env, out)?;
        let v = self.coerce(v, self.ret_kind, "return value", out)?;
        if self.flag_mode {
            env.assign(RET, v);
            let t = self.constant(Literal::Bool(true), Kind::Bool, out);
            env.assign(DONE, t);
        } else {
            env.declare(RET, v);
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, env: &mut Env, out: &mut Vec<Instr>) -> Result<(), LowerError> {
        match s {
            Stmt::Let { name, value } => {
                let v = self.expr(value, env, out)?;
                env.declare(name, v);
            }
            Stmt::Assign { name, value } => {
                let v = self.expr(value, env, out)?;
                if !env.assign(name, v) {
                    return Err(LowerError::Unresolved {
                        function: self.name.to_string(),
                        name: name.clone(),
                    });
                }
            }
            Stmt::If { cond, then, els } => {
                let c = self.expr(cond, env, out)?;
                if self.kind(c) != Kind::Bool {
                    return Err(self.kind_error(format!("if condition has kind {}", self.kind(c))));
                }
                self.branches(c, then, els.as_deref().unwrap_or(&[]), env, out)?;
            }
            Stmt::While { cond, body } => self.while_loop(cond, body, env, out)?,
            Stmt::Expr(e) => {
                self.expr(e, env, out)?;
            }
            Stmt::Print(args) => {
                let mut parts = Vec::new();
                for a in args {
                    parts.push(match a {
                        PrintArg::Text(t) => PrintPart::Text(t.clone()),
                        PrintArg::Value(e) => PrintPart::Var(self.expr(e, env, out)?),
                    });
                }
                out.push(Instr::Print { parts });
            }
            Stmt::Block(b) => {
                env.push();
                self.stmts(b, env, out)?;
                env.pop();
            }
            Stmt::Return(_) => unreachable!("handled by stmts"),
            Stmt::For { .. } | Stmt::CompoundAssign { .. } => {
                return Err(self.unsupported("sugar must be removed before lowering".into()))
            }
        }
        Ok(())
    }

    fn branches(
        &mut self,
        cond: VarId,
        then: &[Stmt],
        els: &[Stmt],
        env: &mut Env,
        out: &mut Vec<Instr>,
    ) -> Result<(), LowerError> {
        let before = env.clone();
        let mut then_instrs = Vec::new();
        env.push();
        self.stmts(then, env, &mut then_instrs)?;
        env.pop();
        let then_env = std::mem::replace(env, before.clone());
        let mut else_instrs = Vec::new();
        env.push();
        self.stmts(els, env, &mut else_instrs)?;
        env.pop();
        let else_env = std::mem::replace(env, before.clone());

        let mut joined = Vec::new();
        let (mut then_yields, mut else_yields) = (Vec::new(), Vec::new());
        for pos in before.visible() {
            let (name, orig) = before.at(pos).clone();
            let t = then_env.at(pos).1;
            let e = else_env.at(pos).1;
            if t == orig && e == orig {
                continue;
            }
            let (kt, ke) = (self.kind(t), self.kind(e));
            let (t, e) = match (kt, ke) {
                _ if kt == ke => (t, e),
                (Kind::Int, Kind::Real) => (self.prim(PrimOp::ToReal, vec![t], &mut then_instrs)?, e),
                (Kind::Real, Kind::Int) => (t, self.prim(PrimOp::ToReal, vec![e], &mut else_instrs)?),
                _ => {
                    return Err(self.kind_error(format!(
                        "'{name}' has kind {kt} in one branch and {ke} in the other"
                    )))
                }
            };
            joined.push(pos);
            then_yields.push(t);
            else_yields.push(e);
        }
        let dsts: Vec<VarId> = then_yields
            .iter()
            .map(|t| {
                let k = self.kind(*t);
                self.new_var(k)
            })
            .collect();
        for (pos, d) in joined.iter().zip(&dsts) {
            env.set(*pos, *d);
        }
        out.push(Instr::If {
            cond,
            then: Region {
                instrs: then_instrs,
                yields: then_yields,
            },
            els: Region {
                instrs: else_instrs,
                yields: else_yields,
            },
            dsts,
        });
        Ok(())
    }

    fn while_loop(&mut self, cond: &Expr, body: &[Stmt], env: &mut Env, out: &mut Vec<Instr>) -> Result<(), LowerError> {
        let mut assigned = Vec::new();
        assigned_outer(body, &mut HashSet::new(), &mut assigned);
        let carried_pos: Vec<(usize, usize)> = env
            .visible()
            .into_iter()
            .filter(|pos| assigned.contains(&env.at(*pos).0))
            .collect();
        let inits: Vec<VarId> = carried_pos.iter().map(|p| env.at(*p).1).collect();
        let carried: Vec<VarId> = inits
            .iter()
            .map(|v| {
                let k = self.kind(*v);
                self.new_var(k)
            })
            .collect();
        for (pos, c) in carried_pos.iter().zip(&carried) {
            env.set(*pos, *c);
        }

        let mut cond_instrs = Vec::new();
        let mut c = self.expr(cond, env, &mut cond_instrs)?;
        if self.kind(c) != Kind::Bool {
            return Err(self.kind_error(format!("while condition has kind {}", self.kind(c))));
        }
        if carried_pos.iter().any(|p| env.at(*p).0 == DONE) {
            let done = env.lookup(DONE).unwrap();
            let not_done = self.prim(PrimOp::Not, vec![done], &mut cond_instrs)?;
            c = self.prim(PrimOp::And, vec![c, not_done], &mut cond_instrs)?;
        }

        let entry = env.clone();
        let mut body_instrs = Vec::new();
        env.push();
        self.stmts(body, env, &mut body_instrs)?;
        env.pop();
        let mut yields = Vec::new();
        for (pos, param) in carried_pos.iter().zip(&carried) {
            let y = env.at(*pos).1;
            let (kp, ky) = (self.kind(*param), self.kind(y));
            let y = if kp == ky {
                y
            } else {
                return Err(self.kind_error(format!(
                    "loop-carried variable '{}' changes kind from {kp} to {ky}",
                    env.at(*pos).0
                )));
            };
            yields.push(y);
        }
        *env = entry;
        let dsts: Vec<VarId> = carried
            .iter()
            .map(|c| {
                let k = self.kind(*c);
                self.new_var(k)
            })
            .collect();
        for (pos, d) in carried_pos.iter().zip(&dsts) {
            env.set(*pos, *d);
        }
        out.push(Instr::While {
            carried,
            inits,
            cond: Region {
                instrs: cond_instrs,
                yields: vec![c],
            },
            body: Region {
                instrs: body_instrs,
                yields,
            },
            dsts,
        });
        Ok(())
    }

    fn expr(&mut self, e: &Expr, env: &mut Env, out: &mut Vec<Instr>) -> Result<VarId, LowerError> {
        match e {
            Expr::Real(v) => Ok(self.constant(Literal::Real(*v), Kind::Real, out)),
            Expr::Int(v) => Ok(self.constant(Literal::Int(*v), Kind::Int, out)),
            Expr::Bool(v) => Ok(self.constant(Literal::Bool(*v), Kind::Bool, out)),
            Expr::Var(name) => env.lookup(name).ok_or_else(|| LowerError::Unresolved {
                function: self.name.to_string(),
                name: name.clone(),
            }),
            Expr::Binary { op, lhs, rhs } => {
                let a = self.expr(lhs, env, out)?;
                let b = self.expr(rhs, env, out)?;
                let prim = match op {
                    BinOp::Add => PrimOp::Add,
                    BinOp::Sub => PrimOp::Sub,
                    BinOp::Mul => PrimOp::Mul,
                    BinOp::Div => PrimOp::Div,
                    BinOp::Pow => PrimOp::Pow,
                    BinOp::Eq => PrimOp::Eq,
                    BinOp::Ne => PrimOp::Ne,
                    BinOp::Lt => PrimOp::Lt,
                    BinOp::Le => PrimOp::Le,
                    BinOp::Gt => PrimOp::Gt,
                    BinOp::Ge => PrimOp::Ge,
                    BinOp::And => PrimOp::And,
                    BinOp::Or => PrimOp::Or,
                };
                self.prim(prim, vec![a, b], out)
            }
            Expr::Call { callee, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.expr(a, env, out)?);
                }
                if let Some(op) = PrimOp::from_name(callee) {
                    if vals.len() != op.arity() {
                        return Err(self.kind_error(format!(
                            "'{callee}' takes {} argument(s), got {}",
                            op.arity(),
                            vals.len()
                        )));
                    }
                    return self.prim(op, vals, out);
                }
                let Some(sig) = self.sigs.get(callee) else {
                    return Err(LowerError::UnknownFunction {
                        function: self.name.to_string(),
                        name: callee.clone(),
                    });
                };
                if sig.params.len() != vals.len() {
                    return Err(self.kind_error(format!(
                        "'{callee}' takes {} argument(s), got {}",
                        sig.params.len(),
                        vals.len()
                    )));
                }
                let (param_kinds, ret) = (sig.params.clone(), sig.ret);
                let mut call_args = Vec::with_capacity(vals.len());
                for (i, (v, k)) in vals.into_iter().zip(param_kinds).enumerate() {
                    call_args.push(self.coerce(v, k, &format!("argument {} of '{callee}'", i + 1), out)?);
                }
                let dst = self.new_var(ret);
                out.push(Instr::Call {
                    dst,
                    callee: callee.clone(),
                    args: call_args,
                });
                Ok(dst)
            }
            Expr::Unary { .. } => Err(self.unsupported("prefix operators must be desugared before lowering".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;
    use crate::ir::validate;

    fn lowered(src: &str) -> IrModule {
        let m = lower(&parse_source(src).unwrap()).unwrap();
        assert!(validate(&m).is_empty(), "{:?}", validate(&m));
        m
    }

    #[test]
    fn straight_line_has_no_control_flow() {
        let m = lowered("fn f(x) { return x^2.0 + 3.0*x + 1.0; }");
        let f = m.get("f").unwrap();
        assert!(f
            .body
            .instrs
            .iter()
            .all(|i| matches!(i, Instr::Const { .. } | Instr::Prim { .. })));
        assert_eq!(f.body.instrs.len(), 7);
    }

    #[test]
    fn unknown_function_is_named() {
        let err = lower(&parse_source("fn f(x) { return g(x); }").unwrap()).unwrap_err();
        assert_eq!(err.symbol(), Some("g"));
        assert!(matches!(err, LowerError::UnknownFunction { .. }));
    }

    #[test]
    fn unresolved_variable() {
        let err = lower(&parse_source("fn f(x) { return y; }").unwrap()).unwrap_err();
        assert_eq!(err.symbol(), Some("y"));
    }

    #[test]
    fn taylor_loop_carries_five_values() {
        let src = r#"
fn s(x) {
    let t = 0.0;
    let sign = -1.0;
    for i in 1:19 {
        if isodd(i) {
            let newterm = x^i / factorial(i);
            if abs(newterm) < 1e-8 { return t; }
            println("i=", i);
            sign = -sign;
            t += sign * newterm;
        }
    }
    return t;
}"#;
        let m = lowered(src);
        let s = m.get("s").unwrap();
        let loops: Vec<&Instr> = s
            .body
            .instrs
            .iter()
            .filter(|i| matches!(i, Instr::While { .. }))
            .collect();
        assert_eq!(loops.len(), 1);
        let Instr::While { carried, .. } = loops[0] else { unreachable!() };
        let kinds: Vec<Kind> = carried.iter().map(|c| s.kind(*c)).collect();
        // done, result, t, sign, i
        assert_eq!(kinds, vec![Kind::Bool, Kind::Real, Kind::Real, Kind::Real, Kind::Int]);
    }

    #[test]
    fn int_real_join_is_promoted() {
        let m = lowered("fn f(x) { let y = 1; if x > 0.0 { y = 2.5; } return y; }");
        let f = m.get("f").unwrap();
        assert_eq!(f.result_kinds(), vec![Kind::Real]);
    }

    #[test]
    fn missing_return_rejected() {
        let err = lower(&parse_source("fn f(x) { if x > 0.0 { return x; } }").unwrap()).unwrap_err();
        assert!(matches!(err, LowerError::Unsupported { .. }));
    }

    #[test]
    fn loop_kind_change_rejected() {
        let err = lower(&parse_source("fn f(x) { let y = 0; while y < 3 { y = 1.5; } return x; }").unwrap())
            .unwrap_err();
        assert!(matches!(err, LowerError::Kind { .. }));
    }

    #[test]
    fn shadowed_assignment_is_not_carried() {
        let m = lowered("fn f(x) { let i = 0; while i < 3 { let x = 1.0; x = 2.0; i = i + 1; } return x; }");
        let f = m.get("f").unwrap();
        let Instr::While { carried, .. } = &f.body.instrs[1] else { panic!() };
        assert_eq!(carried.len(), 1);
    }
}
