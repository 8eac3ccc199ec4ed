//! Source-to-source reverse transform.
//!
//! From a primal function `f` this produces two IR functions:
//!
//! * the augmented primal, identical to `f` except that every differentiable
//!   application becomes a `partial` (which records a pullback) and every
//!   `if`/`while` records its branch or trip count once it completes;
//! * the pullback, which takes the output cotangent and walks the primal
//!   structure backwards: `back` for each recorded application, an `if` on
//!   the recorded branch for each `if`, and a countdown loop over the recorded
//!   trip count for each `while`.
//!
//! Both are generated once per function and serve every input.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::ir::{Callee, Instr, IrFunction, Kind, Literal, PrimOp, PrintPart, Region, VarId};
use crate::runtime::algebra::is_discrete;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot differentiate '{function}': {message}")]
pub struct TransformError {
    pub function: String,
    pub message: String,
}

/// Augmented primal and pullback of one function.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPair {
    pub primal: Arc<IrFunction>,
    pub pullback: Arc<IrFunction>,
}

impl AdjointPair {
    /// Static instruction count of both generated functions.
    pub fn instruction_count(&self) -> usize {
        self.primal.instruction_count() + self.pullback.instruction_count()
    }
}

/// Whether `instr` (outside any loop-condition region) is an application
/// whose result can carry a cotangent.
pub fn is_tracked(f: &IrFunction, instr: &Instr) -> bool {
    match instr {
        Instr::Prim { dst, op, .. } => !is_discrete(*op) && f.kind(*dst).is_differentiable(),
        Instr::Call { dst, .. } => f.kind(*dst).is_differentiable(),
        _ => false,
    }
}

/// Whether a control instruction must record its decision for the pullback.
fn needs_record(f: &IrFunction, instr: &Instr) -> bool {
    let (dsts, regions): (&[VarId], Vec<&Region>) = match instr {
        Instr::If { dsts, then, els, .. } => (dsts, vec![then, els]),
        Instr::While { dsts, body, .. } => (dsts, vec![body]),
        _ => return false,
    };
    dsts.iter().any(|d| f.kind(*d).is_differentiable())
        || regions
            .iter()
            .any(|r| r.any_instr(&|i| is_tracked(f, i) || matches!(i, Instr::If { .. } | Instr::While { .. }) && needs_record(f, i)))
}

pub fn transform(f: &IrFunction) -> Result<AdjointPair, TransformError> {
    let err = |message: String| TransformError {
        function: f.name.clone(),
        message,
    };
    if f.body.any_instr(&Instr::is_adjoint_only) {
        return Err(err(
            "the function already contains adjoint instructions; reverse-over-reverse is not supported, \
             use forward-over-reverse for higher derivatives"
                .into(),
        ));
    }
    let [result] = f.results() else {
        return Err(err(format!("expected one result, found {}", f.results().len())));
    };
    if !f.kind(*result).is_differentiable() {
        return Err(err(format!(
            "the result has kind {} and cannot carry a cotangent",
            f.kind(*result)
        )));
    }

    let mut aug = Augmenter {
        f,
        kinds: f.kinds.clone(),
    };
    let body = aug.region(&f.body);
    let primal = IrFunction {
        name: format!("{}.primal", f.name),
        params: f.params.clone(),
        body,
        kinds: aug.kinds,
    };

    let mut rev = Reverser { f, kinds: Vec::new() };
    let z = rev.new_var(f.kind(*result));
    let mut adj = Adj::new();
    let mut out = Vec::new();
    rev.accumulate(&mut adj, *result, z, &mut out);
    rev.region(&f.body, &mut adj, &mut out);
    let yields = f
        .params
        .iter()
        .map(|p| match adj.get(p) {
            Some(c) => *c,
            None => rev.zero(f.kind(*p), &mut out),
        })
        .collect();
    let pullback = IrFunction {
        name: format!("{}.pullback", f.name),
        params: vec![z],
        body: Region { instrs: out, yields },
        kinds: rev.kinds,
    };
    Ok(AdjointPair {
        primal: Arc::new(primal),
        pullback: Arc::new(pullback),
    })
}

struct Augmenter<'a> {
    f: &'a IrFunction,
    kinds: Vec<Kind>,
}

impl Augmenter<'_> {
    fn new_var(&mut self, kind: Kind) -> VarId {
        self.kinds.push(kind);
        VarId((self.kinds.len() - 1) as u32)
    }

    fn region(&mut self, r: &Region) -> Region {
        let mut instrs = Vec::with_capacity(r.instrs.len());
        for i in &r.instrs {
            self.instr(i, &mut instrs);
        }
        Region {
            instrs,
            yields: r.yields.clone(),
        }
    }

    fn instr(&mut self, instr: &Instr, out: &mut Vec<Instr>) {
        let f = self.f;
        match instr {
            Instr::Prim { dst, op, args } if is_tracked(f, instr) => out.push(Instr::Partial {
                dst: *dst,
                callee: Callee::Prim(*op),
                args: args.clone(),
            }),
            Instr::Call { dst, callee, args } if is_tracked(f, instr) => out.push(Instr::Partial {
                dst: *dst,
                callee: Callee::Func(callee.clone()),
                args: args.clone(),
            }),
            Instr::If {
                cond,
                then,
                els,
                dsts,
            } if needs_record(f, instr) => {
                let then = self.region(then);
                let els = self.region(els);
                out.push(Instr::If {
                    cond: *cond,
                    then,
                    els,
                    dsts: dsts.clone(),
                });
                out.push(Instr::PushBranch { cond: *cond });
            }
            Instr::While {
                carried,
                inits,
                cond,
                body,
                dsts,
            } if needs_record(f, instr) => {
                let start = self.new_var(Kind::Int);
                out.push(Instr::Const {
                    dst: start,
                    value: Literal::Int(0),
                });
                let counter = self.new_var(Kind::Int);
                let mut body = self.region(body);
                let one = self.new_var(Kind::Int);
                let next = self.new_var(Kind::Int);
                body.instrs.push(Instr::Const {
                    dst: one,
                    value: Literal::Int(1),
                });
                body.instrs.push(Instr::Prim {
                    dst: next,
                    op: PrimOp::Add,
                    args: vec![counter, one],
                });
                body.yields.push(next);
                let trips = self.new_var(Kind::Int);
                out.push(Instr::While {
                    carried: carried.iter().copied().chain([counter]).collect(),
                    inits: inits.iter().copied().chain([start]).collect(),
                    cond: cond.clone(),
                    body,
                    dsts: dsts.iter().copied().chain([trips]).collect(),
                });
                out.push(Instr::PushTrips { count: trips });
            }
            other => out.push(other.clone()),
        }
    }
}

type Adj = BTreeMap<VarId, VarId>;

/// Variables used inside `regions` but defined outside of them.
fn free_vars(regions: &[&Region], bound: &[VarId]) -> BTreeSet<VarId> {
    fn walk(r: &Region, uses: &mut BTreeSet<VarId>, defs: &mut BTreeSet<VarId>) {
        for i in &r.instrs {
            match i {
                Instr::Prim { args, .. } | Instr::Call { args, .. } | Instr::Partial { args, .. } => {
                    uses.extend(args)
                }
                Instr::If { cond, .. } | Instr::PushBranch { cond } => {
                    uses.insert(*cond);
                }
                Instr::While { carried, inits, .. } => {
                    uses.extend(inits);
                    defs.extend(carried);
                }
                Instr::Print { parts } => uses.extend(parts.iter().filter_map(|p| match p {
                    PrintPart::Var(v) => Some(*v),
                    PrintPart::Text(_) => None,
                })),
                Instr::PushTrips { count } => {
                    uses.insert(*count);
                }
                Instr::Back { z, .. } => {
                    uses.insert(*z);
                }
                Instr::Const { .. } | Instr::PopBranch { .. } | Instr::PopTrips { .. } => {}
            }
            defs.extend(i.defs());
            for sub in i.regions() {
                walk(sub, uses, defs);
            }
        }
        uses.extend(&r.yields);
    }
    let mut uses = BTreeSet::new();
    let mut defs: BTreeSet<VarId> = bound.iter().copied().collect();
    for r in regions {
        walk(r, &mut uses, &mut defs);
    }
    uses.difference(&defs).copied().collect()
}

struct Reverser<'a> {
    f: &'a IrFunction,
    kinds: Vec<Kind>,
}

impl Reverser<'_> {
    fn new_var(&mut self, kind: Kind) -> VarId {
        self.kinds.push(kind);
        VarId((self.kinds.len() - 1) as u32)
    }

    fn zero(&mut self, kind: Kind, out: &mut Vec<Instr>) -> VarId {
        let dst = self.new_var(kind);
        out.push(Instr::Const {
            dst,
            value: Literal::Zero,
        });
        dst
    }

    fn int(&mut self, v: i64, out: &mut Vec<Instr>) -> VarId {
        let dst = self.new_var(Kind::Int);
        out.push(Instr::Const {
            dst,
            value: Literal::Int(v),
        });
        dst
    }

    fn add(&mut self, kind: Kind, a: VarId, b: VarId, out: &mut Vec<Instr>) -> VarId {
        let dst = self.new_var(kind);
        out.push(Instr::Prim {
            dst,
            op: PrimOp::Add,
            args: vec![a, b],
        });
        dst
    }

    /// Add cotangent `cot` into the adjoint of primal variable `v`.
    fn accumulate(&mut self, adj: &mut Adj, v: VarId, cot: VarId, out: &mut Vec<Instr>) {
        let kind = self.f.kind(v);
        if !kind.is_differentiable() {
            return;
        }
        let total = match adj.get(&v) {
            Some(prev) => self.add(kind, *prev, cot, out),
            None => cot,
        };
        adj.insert(v, total);
    }

    fn differentiable(&self, vars: BTreeSet<VarId>) -> Vec<VarId> {
        vars.into_iter()
            .filter(|v| self.f.kind(*v).is_differentiable())
            .collect()
    }

    fn region(&mut self, r: &Region, adj: &mut Adj, out: &mut Vec<Instr>) {
        for instr in r.instrs.iter().rev() {
            self.instr(instr, adj, out);
        }
    }

    fn instr(&mut self, instr: &Instr, adj: &mut Adj, out: &mut Vec<Instr>) {
        let f = self.f;
        match instr {
            Instr::Prim { dst, args, .. } | Instr::Call { dst, args, .. } if is_tracked(f, instr) => {
                let seed = adj.remove(dst);
                let z = match seed {
                    Some(z) => z,
                    None => self.zero(f.kind(*dst), out),
                };
                let cots: Vec<VarId> = args.iter().map(|a| self.new_var(f.kind(*a))).collect();
                out.push(Instr::Back { z, dsts: cots.clone() });
                if seed.is_some() {
                    for (a, c) in args.iter().zip(cots) {
                        self.accumulate(adj, *a, c, out);
                    }
                }
            }
            Instr::If { then, els, dsts, .. } if needs_record(f, instr) => {
                let seeds: Vec<Option<VarId>> = dsts.iter().map(|d| adj.remove(d)).collect();
                let free = self.differentiable(free_vars(&[then, els], &[]));
                let taken = self.new_var(Kind::Bool);
                out.push(Instr::PopBranch { dst: taken });
                let then = self.branch(then, &seeds, &free);
                let els = self.branch(els, &seeds, &free);
                let outs: Vec<VarId> = free.iter().map(|v| self.new_var(f.kind(*v))).collect();
                out.push(Instr::If {
                    cond: taken,
                    then,
                    els,
                    dsts: outs.clone(),
                });
                for (v, o) in free.iter().zip(outs) {
                    self.accumulate(adj, *v, o, out);
                }
            }
            Instr::While {
                carried,
                inits,
                body,
                dsts,
                ..
            } if needs_record(f, instr) => self.reverse_loop(carried, inits, body, dsts, adj, out),
            _ => {}
        }
    }

    fn branch(&mut self, r: &Region, seeds: &[Option<VarId>], free: &[VarId]) -> Region {
        let mut inner = Adj::new();
        let mut instrs = Vec::new();
        for (y, s) in r.yields.iter().zip(seeds) {
            if let Some(s) = s {
                self.accumulate(&mut inner, *y, *s, &mut instrs);
            }
        }
        self.region(r, &mut inner, &mut instrs);
        let yields = free
            .iter()
            .map(|v| match inner.get(v) {
                Some(c) => *c,
                None => self.zero(self.f.kind(*v), &mut instrs),
            })
            .collect();
        Region { instrs, yields }
    }

    fn reverse_loop(
        &mut self,
        carried: &[VarId],
        inits: &[VarId],
        body: &Region,
        dsts: &[VarId],
        adj: &mut Adj,
        out: &mut Vec<Instr>,
    ) {
        let f = self.f;
        let diff: Vec<usize> = (0..carried.len())
            .filter(|j| f.kind(carried[*j]).is_differentiable())
            .collect();
        let free = self.differentiable(free_vars(&[body], carried));

        let trips = self.new_var(Kind::Int);
        out.push(Instr::PopTrips { dst: trips });
        let mut loop_inits = Vec::new();
        for j in &diff {
            let init = match adj.remove(&dsts[*j]) {
                Some(c) => c,
                None => self.zero(f.kind(carried[*j]), out),
            };
            loop_inits.push(init);
        }
        for v in &free {
            loop_inits.push(self.zero(f.kind(*v), out));
        }
        loop_inits.push(trips);

        let cc: Vec<VarId> = diff.iter().map(|j| self.new_var(f.kind(carried[*j]))).collect();
        let ff: Vec<VarId> = free.iter().map(|v| self.new_var(f.kind(*v))).collect();
        let k = self.new_var(Kind::Int);

        let mut cond = Vec::new();
        let zero = self.int(0, &mut cond);
        let more = self.new_var(Kind::Bool);
        cond.push(Instr::Prim {
            dst: more,
            op: PrimOp::Gt,
            args: vec![k, zero],
        });

        let mut inner = Adj::new();
        let mut step = Vec::new();
        for (idx, j) in diff.iter().enumerate() {
            self.accumulate(&mut inner, body.yields[*j], cc[idx], &mut step);
        }
        self.region(body, &mut inner, &mut step);
        let mut yields = Vec::new();
        for j in &diff {
            let c = match inner.get(&carried[*j]) {
                Some(c) => *c,
                None => self.zero(f.kind(carried[*j]), &mut step),
            };
            yields.push(c);
        }
        for (v, acc) in free.iter().zip(&ff) {
            let next = match inner.get(v) {
                Some(c) => self.add(f.kind(*v), *acc, *c, &mut step),
                None => *acc,
            };
            yields.push(next);
        }
        let one = self.int(1, &mut step);
        let k_next = self.new_var(Kind::Int);
        step.push(Instr::Prim {
            dst: k_next,
            op: PrimOp::Sub,
            args: vec![k, one],
        });
        yields.push(k_next);

        let loop_carried: Vec<VarId> = cc.iter().chain(&ff).copied().chain([k]).collect();
        let loop_dsts: Vec<VarId> = loop_carried.iter().map(|v| self.new_var(self.kinds[v.index()])).collect();
        out.push(Instr::While {
            carried: loop_carried,
            inits: loop_inits,
            cond: Region {
                instrs: cond,
                yields: vec![more],
            },
            body: Region { instrs: step, yields },
            dsts: loop_dsts.clone(),
        });
        for (idx, j) in diff.iter().enumerate() {
            self.accumulate(adj, inits[*j], loop_dsts[idx], out);
        }
        for (i, v) in free.iter().enumerate() {
            self.accumulate(adj, *v, loop_dsts[diff.len() + i], out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;
    use crate::ir::{lower, validate, IrModule};

    fn pair(src: &str, name: &str) -> (IrModule, AdjointPair) {
        let m = lower(&parse_source(src).unwrap()).unwrap();
        let p = transform(m.get(name).unwrap()).unwrap();
        (m, p)
    }

    fn valid(m: &IrModule, p: &AdjointPair) {
        let mut all = m.clone();
        all.push((*p.primal).clone());
        all.push((*p.pullback).clone());
        let d = validate(&all);
        assert!(d.is_empty(), "{d:?}");
    }

    #[test]
    fn straight_line_has_one_back_per_application() {
        let (m, p) = pair("fn f(x) { return x^2.0 + 3.0*x + 1.0; }", "f");
        valid(&m, &p);
        let backs = p.pullback.body.instrs.iter().filter(|i| matches!(i, Instr::Back { .. })).count();
        assert_eq!(backs, 4);
        assert_eq!(p.pullback.params.len(), 1);
        assert_eq!(p.pullback.results().len(), 1);
    }

    #[test]
    fn control_flow_is_preserved() {
        let src = "fn f(x) { let y = x; let i = 0; while i < 3 { if y > 1.0 { y = y * 0.5; } else { y = y * y; } i += 1; } return y; }";
        let (m, p) = pair(src, "f");
        valid(&m, &p);
        assert!(p.pullback.body.any_instr(&|i| matches!(i, Instr::PopTrips { .. })));
        assert!(p.pullback.body.any_instr(&|i| matches!(i, Instr::PopBranch { .. })));
    }

    #[test]
    fn integer_result_is_rejected() {
        let m = lower(&parse_source("fn f(n: int) -> int { return n; }").unwrap()).unwrap();
        assert!(transform(m.get("f").unwrap()).is_err());
    }

    #[test]
    fn reverse_over_reverse_is_rejected() {
        let (_, p) = pair("fn f(x) { return x * x; }", "f");
        let err = transform(&p.pullback).unwrap_err();
        assert!(err.message.contains("forward-over-reverse"));
    }

    #[test]
    fn integer_only_loops_record_nothing() {
        let (m, p) = pair("fn f(x) { let n = 0; while n < 5 { n += 1; } return x * real(n); }", "f");
        valid(&m, &p);
        assert!(!p.primal.body.any_instr(&|i| matches!(i, Instr::PushTrips { .. })));
    }
}
