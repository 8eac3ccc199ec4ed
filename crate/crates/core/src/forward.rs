//! Forward mode over the same IR: dual-number derivatives, JVPs, second
//! derivatives by forward-over-reverse, and fixed-noise mixed gradients.

use crate::reverse::Engine;
use crate::runtime::{fresh_tag, RuntimeError, Value, ValueKind};

type Result<T> = std::result::Result<T, RuntimeError>;

fn tangent_of(y: &Value, tag: u64) -> Value {
    let (primal, tangent) = y.split(tag);
    tangent.materialize(&primal)
}

impl Engine {
    /// Derivative of a one-argument function, by one forward sweep.
    pub fn derivative(&self, name: &str, x: &Value) -> Result<Value> {
        let (_, t) = self.pushforward(name, std::slice::from_ref(x), &[Value::Real(1.0)])?;
        Ok(t)
    }

    /// Value and directional derivative of `name` at `args` along `tangents`.
    /// Tangents of integer and boolean arguments are ignored.
    pub fn pushforward(&self, name: &str, args: &[Value], tangents: &[Value]) -> Result<(Value, Value)> {
        if args.len() != tangents.len() {
            return Err(RuntimeError::Arity(format!(
                "{} argument(s) but {} tangent(s)",
                args.len(),
                tangents.len()
            )));
        }
        let args = self.prepare_args(name, args)?;
        let tag = fresh_tag();
        let seeded: Vec<Value> = args
            .iter()
            .zip(tangents)
            .map(|(a, t)| match a.base_kind() {
                ValueKind::Real | ValueKind::Vec => Value::dual(tag, a.clone(), t.clone()),
                _ => a.clone(),
            })
            .collect();
        let y = self.run(name, &seeded)?;
        let (primal, _) = y.split(tag);
        Ok((primal, tangent_of(&y, tag)))
    }

    /// One forward sweep per real argument, all other arguments held fixed.
    /// Non-real arguments get the zero marker.
    pub fn forward_gradient(&self, name: &str, args: &[Value]) -> Result<Vec<Value>> {
        let args = self.prepare_args(name, args)?;
        let mut out = Vec::with_capacity(args.len());
        for i in 0..args.len() {
            if args[i].base_kind() != ValueKind::Real {
                out.push(Value::Zero);
                continue;
            }
            let tag = fresh_tag();
            let mut seeded = args.clone();
            seeded[i] = Value::dual(tag, args[i].clone(), Value::Real(1.0));
            let y = self.run(name, &seeded)?;
            if y.base_kind() != ValueKind::Real {
                return Err(RuntimeError::NonScalarOutput(name.to_string()));
            }
            out.push(tangent_of(&y, tag));
        }
        Ok(out)
    }

    /// Second derivative of a one-argument function: the forward derivative
    /// of its reverse-mode gradient, with the pullback running over duals.
    pub fn second_derivative(&self, name: &str, x: &Value) -> Result<Value> {
        let tag = fresh_tag();
        let seeded = Value::dual(tag, x.clone(), Value::Real(1.0));
        let aug = self.vjp(name, &[seeded])?;
        if aug.value.base_kind() != ValueKind::Real {
            return Err(RuntimeError::NonScalarOutput(name.to_string()));
        }
        let mut cots = aug.pull(&Value::Real(1.0))?;
        let g = cots.pop().unwrap_or(Value::Zero);
        Ok(g.tangent(tag).materialize(&Value::Real(0.0)))
    }

    /// Gradient with respect to `params` of `name(params..., noise)`, with the
    /// noise path held fixed; one forward sweep per parameter.
    pub fn mixed_gradient(&self, name: &str, params: &[Value], noise: &[f64]) -> Result<Vec<Value>> {
        let mut args = params.to_vec();
        args.push(Value::Vec(noise.to_vec()));
        let mut g = self.forward_gradient(name, &args)?;
        g.truncate(params.len());
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::runtime::NullSink;

    fn engine(src: &str) -> Engine {
        Engine::from_source(src).unwrap().with_sink(Arc::new(NullSink))
    }

    #[test]
    fn identity_derivative_is_one() {
        let e = engine("fn id(x) { return x; }");
        assert_eq!(e.derivative("id", &Value::Real(7.3)).unwrap(), Value::Real(1.0));
    }

    #[test]
    fn pushforward_of_product() {
        let e = engine("fn m(a, b) { return a * b; }");
        let (v, t) = e
            .pushforward("m", &[3.0.into(), 4.0.into()], &[1.0.into(), 0.0.into()])
            .unwrap();
        assert_eq!((v, t), (Value::Real(12.0), Value::Real(4.0)));
        let (_, t0) = e
            .pushforward("m", &[3.0.into(), 4.0.into()], &[0.0.into(), 0.0.into()])
            .unwrap();
        assert_eq!(t0, Value::Real(0.0));
    }

    #[test]
    fn second_derivative_of_cube() {
        let e = engine("fn c(x) { return x^3.0; }");
        assert_eq!(e.second_derivative("c", &Value::Real(2.0)).unwrap(), Value::Real(12.0));
    }

    #[test]
    fn no_perturbation_confusion() {
        let e = engine("fn sq(x) { return x * x; }");
        for x in [-1.5, 0.0, 3.25] {
            assert_eq!(e.second_derivative("sq", &Value::Real(x)).unwrap(), Value::Real(2.0));
        }
    }

    #[test]
    fn mixed_gradient_holds_noise_fixed() {
        let e = engine("fn f(a, v: vec) { return a * sum(v); }");
        let g = e.mixed_gradient("f", &[Value::Real(2.0)], &[1.0, 2.0]).unwrap();
        assert_eq!(g, vec![Value::Real(3.0)]);
    }
}
