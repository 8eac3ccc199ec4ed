use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::algebra::{self, div, dot, is_discrete, mul, neg, pow, primal, sub};
use super::value::{Value, ValueKind};
use super::RuntimeError;
use crate::ir::{Kind, PrimOp};

type Result<T> = std::result::Result<T, RuntimeError>;

/// Maps an output cotangent to one cotangent per input.
pub type PullbackFn = Arc<dyn Fn(&Value) -> Result<Vec<Value>> + Send + Sync>;
pub type PrimalFn = Arc<dyn Fn(&[Value]) -> Result<Value> + Send + Sync>;
/// Builds a pullback from the inputs and the output of one application.
pub type PullbackBuilder = Arc<dyn Fn(&[Value], &Value) -> PullbackFn + Send + Sync>;

pub type RuleKey = (String, Vec<ValueKind>);

/// Operator spellings accepted as aliases for primitive names.
pub fn canonical_name(name: &str) -> &str {
    match name {
        "+" => "add",
        "-" => "sub",
        "*" => "mul",
        "/" => "div",
        "^" => "pow",
        other => other,
    }
}

#[derive(Clone)]
pub struct AdjointRule {
    pub name: String,
    pub kinds: Vec<ValueKind>,
    pub primal: PrimalFn,
    pub pullback: PullbackBuilder,
}

impl fmt::Debug for AdjointRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdjointRule")
            .field("name", &self.name)
            .field("kinds", &self.kinds)
            .finish_non_exhaustive()
    }
}

impl AdjointRule {
    pub fn new(
        name: &str,
        kinds: Vec<ValueKind>,
        primal: impl Fn(&[Value]) -> Result<Value> + Send + Sync + 'static,
        pullback: impl Fn(&[Value], &Value) -> PullbackFn + Send + Sync + 'static,
    ) -> AdjointRule {
        AdjointRule {
            name: canonical_name(name).to_string(),
            kinds,
            primal: Arc::new(primal),
            pullback: Arc::new(pullback),
        }
    }

    pub fn key(&self) -> RuleKey {
        (self.name.clone(), self.kinds.clone())
    }

    /// Evaluate the primal and build its pullback. Integer and boolean inputs
    /// always receive the zero marker, whatever the builder returns.
    pub fn apply(&self, args: &[Value]) -> Result<(Value, PullbackFn)> {
        let out = (self.primal)(args)?;
        let inner = (self.pullback)(args, &out);
        let mask: Vec<bool> = args
            .iter()
            .map(|a| matches!(a.base_kind(), ValueKind::Int | ValueKind::Bool))
            .collect();
        let name = self.name.clone();
        let pb: PullbackFn = Arc::new(move |z| {
            let mut cots = inner(z)?;
            if cots.len() != mask.len() {
                return Err(RuntimeError::Arity(format!(
                    "pullback of '{name}' returned {} cotangents for {} inputs",
                    cots.len(),
                    mask.len()
                )));
            }
            for (c, m) in cots.iter_mut().zip(&mask) {
                if *m {
                    *c = Value::Zero;
                }
            }
            Ok(cots)
        });
        Ok((out, pb))
    }
}

/// The extensible differentiation operator: adjoint rules keyed by callee
/// name and argument kinds.
#[derive(Clone, Default)]
pub struct RuleRegistry {
    rules: HashMap<RuleKey, Arc<AdjointRule>>,
    frozen: bool,
}

impl fmt::Debug for RuleRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RuleRegistry")
            .field("rules", &self.rules.len())
            .field("frozen", &self.frozen)
            .finish()
    }
}

impl RuleRegistry {
    /// A registry without any rules.
    pub fn empty() -> RuleRegistry {
        RuleRegistry::default()
    }

    /// A registry holding the builtin rules for every differentiable primitive.
    pub fn with_builtins() -> RuleRegistry {
        let mut r = RuleRegistry::empty();
        for &op in PrimOp::ALL {
            if is_discrete(op) {
                continue;
            }
            for kinds in kind_combinations(op.arity()) {
                let Some(out) = op.result_kind(&kinds) else { continue };
                if !out.is_differentiable() {
                    continue;
                }
                let kinds = kinds.into_iter().map(value_kind).collect();
                r.register(builtin_rule(op, kinds)).expect("fresh registry");
            }
        }
        r
    }

    /// Add a rule; a later rule for the same key shadows an earlier one.
    pub fn register(&mut self, rule: AdjointRule) -> Result<()> {
        if self.frozen {
            return Err(RuntimeError::FrozenRegistry);
        }
        self.rules.insert(rule.key(), Arc::new(rule));
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn keys(&self) -> Vec<RuleKey> {
        let mut keys: Vec<RuleKey> = self.rules.keys().cloned().collect();
        keys.sort();
        keys
    }

    /// Exact-key lookup.
    pub fn lookup(&self, name: &str, kinds: &[ValueKind]) -> Option<Arc<AdjointRule>> {
        self.rules
            .get(&(canonical_name(name).to_string(), kinds.to_vec()))
            .cloned()
    }

    /// Find the rule for applying `name` to `args`: the exact key first, then
    /// the key of the underlying plain kinds. The second case runs the plain
    /// rule in value arithmetic over uncertain or dual arguments.
    pub fn resolve(&self, name: &str, args: &[Value]) -> Option<Arc<AdjointRule>> {
        let kinds: Vec<ValueKind> = args.iter().map(Value::kind).collect();
        if let Some(rule) = self.lookup(name, &kinds) {
            return Some(rule);
        }
        let base: Vec<ValueKind> = args.iter().map(Value::base_kind).collect();
        if base != kinds {
            return self.lookup(name, &base);
        }
        None
    }
}

pub fn value_kind(k: Kind) -> ValueKind {
    match k {
        Kind::Real => ValueKind::Real,
        Kind::Int => ValueKind::Int,
        Kind::Bool => ValueKind::Bool,
        Kind::Vec => ValueKind::Vec,
    }
}

fn kind_combinations(arity: usize) -> Vec<Vec<Kind>> {
    let base = [Kind::Real, Kind::Int, Kind::Vec];
    let mut out = vec![vec![]];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Kind>| {
                base.iter().map(move |k| {
                    let mut p = prefix.clone();
                    p.push(*k);
                    p
                })
            })
            .collect();
    }
    out
}

fn is_vec(v: &Value) -> bool {
    v.base_kind() == ValueKind::Vec
}

fn vec_len(v: &Value) -> usize {
    primal(v).as_vec().map_or(0, |v| v.len())
}

fn builtin_rule(op: PrimOp, kinds: Vec<ValueKind>) -> AdjointRule {
    AdjointRule::new(
        op.name(),
        kinds,
        move |args| algebra::apply(op, args),
        move |args, out| builtin_pullback(op, args, out),
    )
}

fn unary_op(op: PrimOp, a: &Value) -> Result<Value> {
    algebra::apply(op, std::slice::from_ref(a))
}

fn builtin_pullback(op: PrimOp, args: &[Value], out: &Value) -> PullbackFn {
    use PrimOp::*;
    let a = args[0].clone();
    let b = args.get(1).cloned().unwrap_or(Value::Zero);
    let out = out.clone();
    match op {
        Add => Arc::new(|z| Ok(vec![z.clone(), z.clone()])),
        Sub => Arc::new(|z| Ok(vec![z.clone(), neg(z)?])),
        Mul => {
            let (a_vec, b_vec) = (is_vec(&a), is_vec(&b));
            Arc::new(move |z| {
                let da = if b_vec && !a_vec { dot(z, &b)? } else { mul(z, &b)? };
                let db = if a_vec && !b_vec { dot(&a, z)? } else { mul(&a, z)? };
                Ok(vec![da, db])
            })
        }
        Div => Arc::new(move |z| Ok(vec![div(z, &b)?, neg(&div(&mul(z, &out)?, &b)?)?])),
        Pow => Arc::new(move |z| {
            let unit = match b {
                Value::Int(_) => Value::Int(1),
                _ => Value::Real(1.0),
            };
            let da = mul(z, &mul(&b, &pow(&a, &sub(&b, &unit)?)?)?)?;
            let db = if a.scalar().is_some_and(|x| x > 0.0) {
                mul(z, &mul(&out, &unary_op(Log, &a)?)?)?
            } else {
                Value::Zero
            };
            Ok(vec![da, db])
        }),
        Neg => Arc::new(|z| Ok(vec![neg(z)?])),
        Abs => {
            let negative = a.scalar().is_some_and(|x| x < 0.0);
            Arc::new(move |z| Ok(vec![if negative { neg(z)? } else { z.clone() }]))
        }
        ToReal => Arc::new(|z| Ok(vec![z.clone()])),
        Sin => Arc::new(move |z| Ok(vec![mul(z, &unary_op(Cos, &a)?)?])),
        Cos => Arc::new(move |z| Ok(vec![neg(&mul(z, &unary_op(Sin, &a)?)?)?])),
        Exp => Arc::new(move |z| Ok(vec![mul(z, &out)?])),
        Log => Arc::new(move |z| Ok(vec![div(z, &a)?])),
        Sqrt => Arc::new(move |z| Ok(vec![div(z, &mul(&Value::Real(2.0), &out)?)?])),
        Tanh => Arc::new(move |z| {
            let slope = sub(&Value::Real(1.0), &mul(&out, &out)?)?;
            Ok(vec![mul(z, &slope)?])
        }),
        Sigmoid => Arc::new(move |z| {
            let slope = mul(&out, &sub(&Value::Real(1.0), &out)?)?;
            Ok(vec![mul(z, &slope)?])
        }),
        Dot => Arc::new(move |z| Ok(vec![mul(z, &b)?, mul(z, &a)?])),
        Axpy => {
            let x = b;
            Arc::new(move |z| Ok(vec![dot(z, &x)?, mul(&a, z)?, z.clone()]))
        }
        Sum => {
            let ones = Value::Vec(vec![1.0; vec_len(&a)]);
            Arc::new(move |z| Ok(vec![mul(z, &ones)?]))
        }
        Get => {
            let n = vec_len(&a);
            let i = b.scalar().unwrap_or(0.0) as usize;
            Arc::new(move |z| {
                let mut e = vec![0.0; n];
                if (1..=n).contains(&i) {
                    e[i - 1] = 1.0;
                }
                Ok(vec![mul(z, &Value::Vec(e))?, Value::Zero])
            })
        }
        Eq | Ne | Lt | Le | Gt | Ge | And | Or | Not | IsOdd | Factorial | IDiv | Len => {
            let n = args.len();
            Arc::new(move |_| Ok(vec![Value::Zero; n]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real2() -> Vec<ValueKind> {
        vec![ValueKind::Real, ValueKind::Real]
    }

    #[test]
    fn product_rule_from_builtins() {
        let r = RuleRegistry::with_builtins();
        let rule = r.lookup("*", &real2()).unwrap();
        let (v, pb) = rule.apply(&[Value::Real(3.0), Value::Real(4.0)]).unwrap();
        assert_eq!(v, Value::Real(12.0));
        assert_eq!(pb(&Value::Real(1.0)).unwrap(), vec![Value::Real(4.0), Value::Real(3.0)]);
    }

    #[test]
    fn later_registration_shadows() {
        let mut r = RuleRegistry::with_builtins();
        r.register(AdjointRule::new(
            "+",
            real2(),
            |args| algebra::add(&args[0], &args[1]),
            |_, _| Arc::new(|_| Ok(vec![Value::Real(7.0), Value::Real(7.0)])),
        ))
        .unwrap();
        let (_, pb) = r.lookup("add", &real2()).unwrap().apply(&[1.0.into(), 2.0.into()]).unwrap();
        assert_eq!(pb(&Value::Real(1.0)).unwrap()[0], Value::Real(7.0));
    }

    #[test]
    fn frozen_registry_rejects_registration() {
        let mut r = RuleRegistry::empty();
        r.freeze();
        let rule = builtin_rule(PrimOp::Add, real2());
        assert_eq!(r.register(rule).unwrap_err(), RuntimeError::FrozenRegistry);
    }

    #[test]
    fn integer_inputs_get_zero_cotangents() {
        let r = RuleRegistry::with_builtins();
        let rule = r.lookup("pow", &[ValueKind::Real, ValueKind::Int]).unwrap();
        let (v, pb) = rule.apply(&[Value::Real(2.0), Value::Int(3)]).unwrap();
        assert_eq!(v, Value::Real(8.0));
        assert_eq!(pb(&Value::Real(1.0)).unwrap(), vec![Value::Real(12.0), Value::Zero]);
    }

    #[test]
    fn uncertain_arguments_resolve_to_plain_rule() {
        let r = RuleRegistry::with_builtins();
        let x = Value::uncertain(1.0, 0.1);
        assert!(r.lookup("pow", &[ValueKind::Uncertain, ValueKind::Int]).is_none());
        let rule = r.resolve("pow", &[x, Value::Int(2)]).unwrap();
        assert_eq!(rule.kinds, vec![ValueKind::Real, ValueKind::Int]);
    }

    #[test]
    fn vector_rules_unbroadcast() {
        let r = RuleRegistry::with_builtins();
        let v = Value::Vec(vec![1.0, 2.0]);
        let rule = r.lookup("mul", &[ValueKind::Real, ValueKind::Vec]).unwrap();
        let (_, pb) = rule.apply(&[Value::Real(3.0), v]).unwrap();
        let cots = pb(&Value::Vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(cots, vec![Value::Real(3.0), Value::Vec(vec![3.0, 3.0])]);
    }
}
