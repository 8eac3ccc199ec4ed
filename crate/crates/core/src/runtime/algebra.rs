//! Primitive arithmetic over [`Value`]s.
//!
//! Every primitive works on plain values, on [`Uncertain`] values (linear
//! error propagation) and on [`Dual`](super::Dual) values (forward-mode
//! perturbations), in any nesting. Both perturbation kinds share one set of
//! tangent formulas, [`jvp`].

use super::value::{Term, Uncertain, Value};
use super::RuntimeError;
use crate::ir::PrimOp;

type Result<T> = std::result::Result<T, RuntimeError>;

fn kind_error(op: PrimOp, args: &[Value]) -> RuntimeError {
    let kinds: Vec<&str> = args.iter().map(|a| a.kind().name()).collect();
    RuntimeError::Kind(format!("'{}' cannot be applied to ({})", op.name(), kinds.join(", ")))
}

/// Whether `op` produces a non-differentiable (integer or boolean) result.
pub fn is_discrete(op: PrimOp) -> bool {
    use PrimOp::*;
    matches!(
        op,
        Eq | Ne | Lt | Le | Gt | Ge | And | Or | Not | IsOdd | Factorial | IDiv | Len
    )
}

/// Strip perturbations and error terms, keeping only the primal value.
pub fn primal(v: &Value) -> Value {
    match v {
        Value::Dual(d) => primal(&d.primal),
        Value::Uncertain(u) => Value::Real(u.mean),
        v => v.clone(),
    }
}

/// Apply primitive `op` to `args`.
pub fn apply(op: PrimOp, args: &[Value]) -> Result<Value> {
    if args.len() != op.arity() {
        return Err(RuntimeError::Arity(format!(
            "'{}' takes {} argument(s), got {}",
            op.name(),
            op.arity(),
            args.len()
        )));
    }
    if let Some(v) = zero_shortcut(op, args)? {
        return Ok(v);
    }
    if is_discrete(op) {
        let plain: Vec<Value> = args.iter().map(primal).collect();
        return concrete(op, &plain);
    }
    if let Some(tag) = args.iter().filter_map(Value::tag).max() {
        let (ps, ds): (Vec<Value>, Vec<Value>) = args.iter().map(|a| a.split(tag)).unzip();
        let out = apply(op, &ps)?;
        let tangent = jvp(op, &ps, &ds, &out)?;
        return Ok(Value::dual(tag, out, tangent));
    }
    if args.iter().any(|a| matches!(a, Value::Uncertain(_))) {
        return apply_uncertain(op, args);
    }
    concrete(op, args)
}

/// Additive-identity rules for the zero marker.
fn zero_shortcut(op: PrimOp, args: &[Value]) -> Result<Option<Value>> {
    use PrimOp::*;
    if !args.iter().any(Value::is_zero) {
        return Ok(None);
    }
    let z = |i: usize| args[i].is_zero();
    Ok(Some(match op {
        Add if z(0) => args[1].clone(),
        Add => args[0].clone(),
        Sub if z(1) => args[0].clone(),
        Sub => neg(&args[1])?,
        Mul | Dot if z(0) || z(1) => Value::Zero,
        Div if z(0) => Value::Zero,
        Neg | Sum | Get if z(0) => Value::Zero,
        Axpy if z(0) || z(1) => args[2].clone(),
        Axpy if z(2) => mul(&args[0], &args[1])?,
        _ => return Ok(None),
    }))
}

fn apply_uncertain(op: PrimOp, args: &[Value]) -> Result<Value> {
    let means: Vec<Value> = args.iter().map(primal).collect();
    let out = concrete(op, &means)?;
    let Value::Real(mean) = out else {
        return Err(RuntimeError::Kind(format!(
            "'{}' of uncertain values must be a real scalar",
            op.name()
        )));
    };
    let mut parts: Vec<(f64, &[Term])> = Vec::new();
    for (i, a) in args.iter().enumerate() {
        if let Value::Uncertain(u) = a {
            let mut unit = vec![Value::Zero; args.len()];
            unit[i] = Value::Real(1.0);
            let partial = jvp(op, &means, &unit, &out)?.scalar().unwrap_or(0.0);
            parts.push((partial, &u.terms));
        }
    }
    Ok(Value::Uncertain(Uncertain::combine(mean, &parts)))
}

/// Tangent of `op` at primals `p` along tangents `d`; `out` is `op(p)`.
pub fn jvp(op: PrimOp, p: &[Value], d: &[Value], out: &Value) -> Result<Value> {
    use PrimOp::*;
    let one = Value::Real(1.0);
    Ok(match op {
        Add => add(&d[0], &d[1])?,
        Sub => sub(&d[0], &d[1])?,
        Mul => add(&mul(&d[0], &p[1])?, &mul(&p[0], &d[1])?)?,
        Div => div(&sub(&d[0], &mul(out, &d[1])?)?, &p[1])?,
        Pow => {
            let mut t = Value::Zero;
            if !d[0].is_zero() {
                let unit = match p[1] {
                    Value::Int(_) => Value::Int(1),
                    _ => one.clone(),
                };
                let slope = mul(&p[1], &pow(&p[0], &sub(&p[1], &unit)?)?)?;
                t = mul(&d[0], &slope)?;
            }
            // The exponent's partial a^b·ln a only exists for a positive base.
            if !d[1].is_zero() && p[0].scalar().is_some_and(|a| a > 0.0) {
                t = add(&t, &mul(&d[1], &mul(out, &unary(Log, &p[0])?)?)?)?;
            }
            t
        }
        Neg => neg(&d[0])?,
        Abs => {
            if p[0].scalar().is_some_and(|a| a < 0.0) {
                neg(&d[0])?
            } else {
                d[0].clone()
            }
        }
        ToReal => d[0].clone(),
        Sin => mul(&d[0], &unary(Cos, &p[0])?)?,
        Cos => neg(&mul(&d[0], &unary(Sin, &p[0])?)?)?,
        Exp => mul(&d[0], out)?,
        Log => div(&d[0], &p[0])?,
        Sqrt => div(&d[0], &mul(&Value::Real(2.0), out)?)?,
        Tanh => mul(&d[0], &sub(&one, &mul(out, out)?)?)?,
        Sigmoid => mul(&d[0], &mul(out, &sub(&one, out)?)?)?,
        Dot => add(&dot(&d[0], &p[1])?, &dot(&p[0], &d[1])?)?,
        Axpy => add(&add(&mul(&d[0], &p[1])?, &mul(&p[0], &d[1])?)?, &d[2])?,
        Sum => apply(Sum, &[d[0].clone()])?,
        Get => apply(Get, &[d[0].clone(), p[1].clone()])?,
        Eq | Ne | Lt | Le | Gt | Ge | And | Or | Not | IsOdd | Factorial | IDiv | Len => Value::Zero,
    })
}

fn num(v: &Value) -> Option<f64> {
    match v {
        Value::Real(x) => Some(*x),
        Value::Int(i) => Some(*i as f64),
        Value::Zero => Some(0.0),
        _ => None,
    }
}

fn int_overflow(op: PrimOp) -> RuntimeError {
    RuntimeError::Domain(format!("integer overflow in '{}'", op.name()))
}

fn zip_vecs(op: PrimOp, a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Result<Value> {
    if a.len() != b.len() {
        return Err(RuntimeError::Domain(format!(
            "'{}' of vectors with lengths {} and {}",
            op.name(),
            a.len(),
            b.len()
        )));
    }
    Ok(Value::Vec(a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()))
}

/// Primitives over plain values: reals, ints, bools, vectors and zero.
fn concrete(op: PrimOp, args: &[Value]) -> Result<Value> {
    use PrimOp::*;
    use Value::{Bool, Int, Real, Vec as V};
    let err = || kind_error(op, args);
    let scalar = |i: usize| num(&args[i]).ok_or_else(err);
    Ok(match op {
        Add | Sub | Mul => match (&args[0], &args[1]) {
            (Int(a), Int(b)) => Int(match op {
                Add => a.checked_add(*b),
                Sub => a.checked_sub(*b),
                _ => a.checked_mul(*b),
            }
            .ok_or_else(|| int_overflow(op))?),
            (V(a), V(b)) if op != Mul => {
                if op == Add {
                    zip_vecs(op, a, b, |x, y| x + y)?
                } else {
                    zip_vecs(op, a, b, |x, y| x - y)?
                }
            }
            (V(v), s) | (s, V(v)) if op == Mul => {
                let s = num(s).ok_or_else(err)?;
                V(v.iter().map(|x| s * x).collect())
            }
            _ => {
                let (a, b) = (scalar(0)?, scalar(1)?);
                Real(match op {
                    Add => a + b,
                    Sub => a - b,
                    _ => a * b,
                })
            }
        },
        Div => Real(scalar(0)? / scalar(1)?),
        Pow => match (&args[0], &args[1]) {
            (Int(a), Int(b)) => {
                let e = u32::try_from(*b).map_err(|_| {
                    RuntimeError::Domain(format!("negative integer exponent {b}"))
                })?;
                Int(a.checked_pow(e).ok_or_else(|| int_overflow(op))?)
            }
            _ => Real(scalar(0)?.powf(scalar(1)?)),
        },
        Neg => match &args[0] {
            Int(a) => Int(a.checked_neg().ok_or_else(|| int_overflow(op))?),
            V(v) => V(v.iter().map(|x| -x).collect()),
            _ => Real(-scalar(0)?),
        },
        Abs => match &args[0] {
            Int(a) => Int(a.checked_abs().ok_or_else(|| int_overflow(op))?),
            _ => Real(scalar(0)?.abs()),
        },
        Eq | Ne => {
            let eq = match (&args[0], &args[1]) {
                (Int(a), Int(b)) => a == b,
                (Bool(a), Bool(b)) => a == b,
                _ => scalar(0)? == scalar(1)?,
            };
            Bool(eq == (op == Eq))
        }
        Lt | Le | Gt | Ge => {
            let ord = match (&args[0], &args[1]) {
                (Int(a), Int(b)) => a.partial_cmp(b),
                _ => scalar(0)?.partial_cmp(&scalar(1)?),
            };
            use std::cmp::Ordering::*;
            Bool(match (op, ord) {
                (_, None) => false,
                (Lt, Some(o)) => o == Less,
                (Le, Some(o)) => o != Greater,
                (Gt, Some(o)) => o == Greater,
                (_, Some(o)) => o != Less,
            })
        }
        And | Or => match (&args[0], &args[1]) {
            (Bool(a), Bool(b)) => Bool(if op == And { *a && *b } else { *a || *b }),
            _ => return Err(err()),
        },
        Not => match &args[0] {
            Bool(a) => Bool(!a),
            _ => return Err(err()),
        },
        IsOdd => match &args[0] {
            Int(a) => Bool(a.rem_euclid(2) == 1),
            _ => return Err(err()),
        },
        Factorial => match &args[0] {
            Int(n @ 0..=20) => Int((1..=*n).product()),
            Int(n) => {
                return Err(RuntimeError::Domain(format!(
                    "factorial is defined for 0 ≤ n ≤ 20, got {n}"
                )))
            }
            _ => return Err(err()),
        },
        IDiv => match (&args[0], &args[1]) {
            (Int(_), Int(0)) => return Err(RuntimeError::Domain("integer division by zero".into())),
            (Int(a), Int(b)) => Int(a.checked_div(*b).ok_or_else(|| int_overflow(op))?),
            _ => return Err(err()),
        },
        ToReal => Real(scalar(0)?),
        Sin => Real(scalar(0)?.sin()),
        Cos => Real(scalar(0)?.cos()),
        Exp => Real(scalar(0)?.exp()),
        Log => Real(scalar(0)?.ln()),
        Sqrt => Real(scalar(0)?.sqrt()),
        Tanh => Real(scalar(0)?.tanh()),
        Sigmoid => Real(1.0 / (1.0 + (-scalar(0)?).exp())),
        Dot => match (&args[0], &args[1]) {
            (V(a), V(b)) => {
                if a.len() != b.len() {
                    return Err(RuntimeError::Domain(format!(
                        "dot of vectors with lengths {} and {}",
                        a.len(),
                        b.len()
                    )));
                }
                Real(a.iter().zip(b).map(|(x, y)| x * y).sum())
            }
            _ => return Err(err()),
        },
        Axpy => match (&args[1], &args[2]) {
            (V(x), V(y)) => {
                let a = scalar(0)?;
                zip_vecs(op, x, y, |x, y| a * x + y)?
            }
            _ => return Err(err()),
        },
        Sum => match &args[0] {
            V(v) => Real(v.iter().sum()),
            _ => return Err(err()),
        },
        Get => match (&args[0], &args[1]) {
            (V(v), Int(i)) => {
                let idx = usize::try_from(*i).ok().filter(|i| (1..=v.len()).contains(i));
                match idx {
                    Some(k) => Real(v[k - 1]),
                    None => {
                        return Err(RuntimeError::Domain(format!(
                            "index {i} out of bounds for vector of length {}",
                            v.len()
                        )))
                    }
                }
            }
            _ => return Err(err()),
        },
        Len => match &args[0] {
            V(v) => Int(v.len() as i64),
            _ => return Err(err()),
        },
    })
}

fn unary(op: PrimOp, a: &Value) -> Result<Value> {
    apply(op, std::slice::from_ref(a))
}

pub fn add(a: &Value, b: &Value) -> Result<Value> {
    apply(PrimOp::Add, &[a.clone(), b.clone()])
}

pub fn sub(a: &Value, b: &Value) -> Result<Value> {
    apply(PrimOp::Sub, &[a.clone(), b.clone()])
}

pub fn mul(a: &Value, b: &Value) -> Result<Value> {
    apply(PrimOp::Mul, &[a.clone(), b.clone()])
}

pub fn div(a: &Value, b: &Value) -> Result<Value> {
    apply(PrimOp::Div, &[a.clone(), b.clone()])
}

pub fn pow(a: &Value, b: &Value) -> Result<Value> {
    apply(PrimOp::Pow, &[a.clone(), b.clone()])
}

pub fn neg(a: &Value) -> Result<Value> {
    unary(PrimOp::Neg, a)
}

pub fn dot(a: &Value, b: &Value) -> Result<Value> {
    apply(PrimOp::Dot, &[a.clone(), b.clone()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::value::fresh_tag;

    fn real(v: Value) -> f64 {
        match v {
            Value::Real(x) => x,
            other => panic!("expected real, got {other:?}"),
        }
    }

    #[test]
    fn mixed_int_real_promotes() {
        assert_eq!(add(&Value::Int(1), &Value::Real(0.5)).unwrap(), Value::Real(1.5));
        assert_eq!(add(&Value::Int(1), &Value::Int(2)).unwrap(), Value::Int(3));
        assert_eq!(div(&Value::Int(1), &Value::Int(2)).unwrap(), Value::Real(0.5));
    }

    #[test]
    fn division_by_zero_is_ieee() {
        assert_eq!(real(div(&Value::Real(1.0), &Value::Real(0.0)).unwrap()), f64::INFINITY);
        assert!(real(div(&Value::Real(0.0), &Value::Real(0.0)).unwrap()).is_nan());
    }

    #[test]
    fn factorial_domain() {
        assert_eq!(apply(PrimOp::Factorial, &[Value::Int(20)]).unwrap(), Value::Int(2432902008176640000));
        assert!(matches!(
            apply(PrimOp::Factorial, &[Value::Int(21)]),
            Err(RuntimeError::Domain(_))
        ));
    }

    #[test]
    fn get_is_one_based() {
        let v = Value::Vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(apply(PrimOp::Get, &[v.clone(), Value::Int(1)]).unwrap(), Value::Real(1.0));
        assert!(apply(PrimOp::Get, &[v, Value::Int(0)]).is_err());
    }

    #[test]
    fn correlated_uncertainty() {
        let x = Value::uncertain(2.0, 0.1);
        let Value::Uncertain(s) = add(&x, &x).unwrap() else { panic!() };
        assert_eq!(s.sigma(), 0.2);
        let Value::Uncertain(d) = sub(&x, &x).unwrap() else { panic!() };
        assert_eq!(d.sigma(), 0.0);
        let Value::Uncertain(p) = pow(&x, &Value::Int(2)).unwrap() else { panic!() };
        assert_eq!(p.mean, 4.0);
        assert!((p.sigma() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn dual_product_rule() {
        let t = fresh_tag();
        let x = Value::dual(t, Value::Real(3.0), Value::Real(1.0));
        let y = mul(&x, &Value::Real(4.0)).unwrap();
        assert_eq!(y.split(t), (Value::Real(12.0), Value::Real(4.0)));
    }

    #[test]
    fn nested_duals_do_not_confuse_tags() {
        let outer = fresh_tag();
        let inner = fresh_tag();
        let x = Value::dual(outer, Value::Real(3.0), Value::Real(1.0));
        let y = Value::dual(inner, x.clone(), Value::Real(1.0));
        // d/dy d/dx (x*y) = 1, with both perturbations seeded on the same point.
        let prod = mul(&x, &y).unwrap();
        let d_inner = prod.tangent(inner);
        assert_eq!(d_inner.tangent(outer), Value::Real(1.0));
    }

    #[test]
    fn pow_exponent_partial_needs_positive_base() {
        let t = fresh_tag();
        let b = Value::dual(t, Value::Real(2.0), Value::Real(1.0));
        let y = pow(&Value::Real(-1.0), &b).unwrap();
        assert_eq!(y, Value::Real(1.0));
    }

    #[test]
    fn zero_marker_is_additive_identity() {
        let v = Value::Vec(vec![1.0, 2.0]);
        assert_eq!(add(&Value::Zero, &v).unwrap(), v);
        assert_eq!(mul(&Value::Zero, &v).unwrap(), Value::Zero);
        assert_eq!(sub(&Value::Zero, &Value::Real(2.0)).unwrap(), Value::Real(-2.0));
    }
}
