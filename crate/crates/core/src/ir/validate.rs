use std::collections::HashSet;
use std::fmt;

use super::{Callee, Instr, IrFunction, IrModule, Kind, PrintPart, Region, VarId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: String,
    /// The variable the diagnostic is about, if any.
    pub var: Option<VarId>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.function, self.message)
    }
}

/// Check single assignment, scoping, join arity/kinds and call targets.
/// An empty result means the module is well formed.
pub fn validate(module: &IrModule) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for f in module.functions() {
        Checker {
            module,
            f,
            defined: HashSet::new(),
            diags: &mut diags,
        }
        .function();
    }
    diags
}

struct Checker<'a> {
    module: &'a IrModule,
    f: &'a IrFunction,
    defined: HashSet<VarId>,
    diags: &'a mut Vec<Diagnostic>,
}

fn describe(instr: &Instr) -> String {
    let defs = instr.defs();
    let lhs: Vec<String> = defs.iter().map(|d| d.to_string()).collect();
    let head = match instr {
        Instr::Const { .. } => "const".to_string(),
        Instr::Prim { op, .. } => op.name().to_string(),
        Instr::Call { callee, .. } => format!("call @{callee}"),
        Instr::If { cond, .. } => format!("if {cond}"),
        Instr::While { .. } => "while".to_string(),
        Instr::Print { .. } => "print".to_string(),
        Instr::Partial { callee, .. } => format!("partial {}", callee.name()),
        Instr::PushBranch { cond } => format!("push_branch {cond}"),
        Instr::PushTrips { count } => format!("push_trips {count}"),
        Instr::PopBranch { .. } => "pop_branch".to_string(),
        Instr::PopTrips { .. } => "pop_trips".to_string(),
        Instr::Back { z, .. } => format!("back {z}"),
    };
    if lhs.is_empty() {
        head
    } else {
        format!("{} = {head}", lhs.join(", "))
    }
}

impl<'a> Checker<'a> {
    fn report(&mut self, var: Option<VarId>, message: String) {
        self.diags.push(Diagnostic {
            function: self.f.name.clone(),
            var,
            message,
        });
    }

    fn kind(&self, v: VarId) -> Option<Kind> {
        self.f.kinds.get(v.index()).copied()
    }

    fn define(&mut self, v: VarId) {
        if self.kind(v).is_none() {
            self.report(Some(v), format!("{v} has no kind entry"));
        }
        if !self.defined.insert(v) {
            self.report(Some(v), format!("{v} is assigned more than once"));
        }
    }

    fn use_var(&mut self, v: VarId, scope: &[HashSet<VarId>], at: &Instr) {
        if !scope.iter().any(|s| s.contains(&v)) {
            self.report(
                Some(v),
                format!("{v} is used by `{}` without a visible definition", describe(at)),
            );
        }
    }

    fn function(&mut self) {
        let mut top = HashSet::new();
        for p in &self.f.params {
            self.define(*p);
            top.insert(*p);
        }
        let mut scope = vec![top];
        let body = &self.f.body;
        self.region(body, &mut scope);
    }

    /// Check a region in a fresh inner scope; yields are checked inside it.
    fn region(&mut self, r: &Region, scope: &mut Vec<HashSet<VarId>>) {
        scope.push(HashSet::new());
        for instr in &r.instrs {
            self.instr(instr, scope);
        }
        for y in &r.yields {
            if !scope.iter().any(|s| s.contains(y)) {
                self.report(Some(*y), format!("{y} is yielded without a visible definition"));
            }
        }
        scope.pop();
    }

    fn region_with(&mut self, r: &Region, scope: &mut Vec<HashSet<VarId>>, params: &[VarId]) {
        scope.push(params.iter().copied().collect());
        self.region(r, scope);
        scope.pop();
    }

    fn instr(&mut self, instr: &Instr, scope: &mut Vec<HashSet<VarId>>) {
        match instr {
            Instr::Const { .. } | Instr::PopBranch { .. } | Instr::PopTrips { .. } => {}
            Instr::Prim { dst, op, args } => {
                for a in args {
                    self.use_var(*a, scope, instr);
                }
                if args.len() != op.arity() {
                    self.report(
                        Some(*dst),
                        format!("`{}` has {} operands, expected {}", describe(instr), args.len(), op.arity()),
                    );
                } else {
                    let kinds: Option<Vec<Kind>> = args.iter().map(|a| self.kind(*a)).collect();
                    let expected = kinds.and_then(|k| op.result_kind(&k));
                    if expected.is_some() && expected != self.kind(*dst) {
                        self.report(Some(*dst), format!("`{}` has an ill-kinded result", describe(instr)));
                    } else if expected.is_none() {
                        self.report(Some(*dst), format!("`{}` has ill-kinded operands", describe(instr)));
                    }
                }
            }
            Instr::Call { dst, callee, args } => {
                for a in args {
                    self.use_var(*a, scope, instr);
                }
                self.check_call(*dst, callee, args.len(), instr);
            }
            Instr::Partial { dst, callee, args } => {
                for a in args {
                    self.use_var(*a, scope, instr);
                }
                match callee {
                    Callee::Prim(op) if op.arity() != args.len() => self.report(
                        Some(*dst),
                        format!("`{}` has {} operands, expected {}", describe(instr), args.len(), op.arity()),
                    ),
                    Callee::Prim(_) => {}
                    Callee::Func(name) => self.check_call(*dst, name, args.len(), instr),
                }
            }
            Instr::If {
                cond,
                then,
                els,
                dsts,
            } => {
                self.use_var(*cond, scope, instr);
                if self.kind(*cond) != Some(Kind::Bool) {
                    self.report(Some(*cond), format!("`{}` condition is not bool", describe(instr)));
                }
                self.region(then, scope);
                self.region(els, scope);
                if then.yields.len() != dsts.len() || els.yields.len() != dsts.len() {
                    self.report(
                        dsts.first().copied(),
                        format!(
                            "`{}` branch yields have arity {} and {}, expected {}",
                            describe(instr),
                            then.yields.len(),
                            els.yields.len(),
                            dsts.len()
                        ),
                    );
                } else {
                    for ((t, e), d) in then.yields.iter().zip(&els.yields).zip(dsts) {
                        let kd = self.kind(*d);
                        if self.kind(*t) != kd || self.kind(*e) != kd {
                            self.report(Some(*d), format!("`{}` branch yields disagree in kind for {d}", describe(instr)));
                        }
                    }
                }
            }
            Instr::While {
                carried,
                inits,
                cond,
                body,
                dsts,
            } => {
                for i in inits {
                    self.use_var(*i, scope, instr);
                }
                for c in carried {
                    self.define(*c);
                }
                self.region_with(cond, scope, carried);
                self.region_with(body, scope, carried);
                let n = carried.len();
                if inits.len() != n || body.yields.len() != n || dsts.len() != n {
                    self.report(
                        dsts.first().copied(),
                        format!(
                            "`{}` carries {n} values but has {} inits, {} body yields and {} results",
                            describe(instr),
                            inits.len(),
                            body.yields.len(),
                            dsts.len()
                        ),
                    );
                } else {
                    for i in 0..n {
                        let kc = self.kind(carried[i]);
                        if self.kind(inits[i]) != kc
                            || self.kind(body.yields[i]) != kc
                            || self.kind(dsts[i]) != kc
                        {
                            self.report(
                                Some(carried[i]),
                                format!("`{}` carried value {} disagrees in kind", describe(instr), carried[i]),
                            );
                        }
                    }
                }
                if cond.yields.len() != 1 || cond.yields.first().and_then(|c| self.kind(*c)) != Some(Kind::Bool) {
                    self.report(dsts.first().copied(), format!("`{}` condition must yield one bool", describe(instr)));
                }
            }
            Instr::Print { parts } => {
                for p in parts {
                    if let PrintPart::Var(v) = p {
                        self.use_var(*v, scope, instr);
                    }
                }
            }
            Instr::PushBranch { cond } => self.use_var(*cond, scope, instr),
            Instr::PushTrips { count } => self.use_var(*count, scope, instr),
            Instr::Back { z, .. } => self.use_var(*z, scope, instr),
        }
        for d in instr.defs() {
            self.define(d);
            scope.last_mut().expect("scope").insert(d);
        }
    }

    fn check_call(&mut self, dst: VarId, callee: &str, nargs: usize, instr: &Instr) {
        match self.module.get(callee) {
            None => self.report(Some(dst), format!("`{}` calls unknown function '{callee}'", describe(instr))),
            Some(g) if g.params.len() != nargs => self.report(
                Some(dst),
                format!("`{}` passes {nargs} arguments, '{callee}' takes {}", describe(instr), g.params.len()),
            ),
            Some(_) => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Literal, PrimOp};

    fn func(body: Region, kinds: Vec<Kind>) -> IrModule {
        IrModule::new(vec![IrFunction {
            name: "bad".into(),
            params: vec![VarId(0)],
            body,
            kinds,
        }])
    }

    #[test]
    fn double_assignment_is_reported() {
        let m = func(
            Region {
                instrs: vec![
                    Instr::Const { dst: VarId(1), value: Literal::Real(1.0) },
                    Instr::Const { dst: VarId(1), value: Literal::Real(2.0) },
                ],
                yields: vec![VarId(1)],
            },
            vec![Kind::Real, Kind::Real],
        );
        let d = validate(&m);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].var, Some(VarId(1)));
        assert!(d[0].message.contains("%1"));
    }

    #[test]
    fn mismatched_if_arity_is_reported() {
        let m = func(
            Region {
                instrs: vec![
                    Instr::Const { dst: VarId(1), value: Literal::Bool(true) },
                    Instr::If {
                        cond: VarId(1),
                        then: Region { instrs: vec![], yields: vec![VarId(0)] },
                        els: Region { instrs: vec![], yields: vec![] },
                        dsts: vec![VarId(2)],
                    },
                ],
                yields: vec![VarId(2)],
            },
            vec![Kind::Real, Kind::Bool, Kind::Real],
        );
        let d = validate(&m);
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.contains("if %1"), "{}", d[0].message);
    }

    #[test]
    fn use_outside_scope_is_reported() {
        let m = func(
            Region {
                instrs: vec![
                    Instr::Const { dst: VarId(1), value: Literal::Bool(true) },
                    Instr::If {
                        cond: VarId(1),
                        then: Region {
                            instrs: vec![Instr::Prim { dst: VarId(2), op: PrimOp::Neg, args: vec![VarId(0)] }],
                            yields: vec![VarId(2)],
                        },
                        els: Region { instrs: vec![], yields: vec![VarId(0)] },
                        dsts: vec![VarId(3)],
                    },
                ],
                // %2 only lives inside the then-branch.
                yields: vec![VarId(2)],
            },
            vec![Kind::Real, Kind::Bool, Kind::Real, Kind::Real],
        );
        let d = validate(&m);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].var, Some(VarId(2)));
    }
}
