use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::json;

static NEXT_SOURCE: AtomicU64 = AtomicU64::new(1);
static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

/// Runtime kind of a [`Value`], used as part of adjoint-rule keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueKind {
    Real,
    Int,
    Bool,
    Vec,
    Uncertain,
    Dual,
    Zero,
}

impl ValueKind {
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Real => "real",
            ValueKind::Int => "int",
            ValueKind::Bool => "bool",
            ValueKind::Vec => "vec",
            ValueKind::Uncertain => "uncertain",
            ValueKind::Dual => "dual",
            ValueKind::Zero => "zero",
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One independent error source contributing linearly to an [`Uncertain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub source: u64,
    pub sigma: f64,
    pub coeff: f64,
}

/// A real value with first-order, correlation-aware error propagation.
///
/// Each term records how strongly the value depends on one independent
/// source. The standard deviation is derived from the terms on demand, so
/// `x - x` has exactly zero uncertainty and `x + x` has twice that of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Uncertain {
    pub mean: f64,
    /// Sorted by source id, no duplicates.
    pub terms: Vec<Term>,
}

impl Uncertain {
    /// A fresh measurement with its own independent error source.
    pub fn new(mean: f64, sigma: f64) -> Uncertain {
        let source = NEXT_SOURCE.fetch_add(1, Ordering::Relaxed);
        Uncertain {
            mean,
            terms: vec![Term {
                source,
                sigma,
                coeff: 1.0,
            }],
        }
    }

    pub fn sigma(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| (t.coeff * t.sigma).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `Σ coeffs[i] * parts[i].terms`, merged by source.
    pub(crate) fn combine(mean: f64, parts: &[(f64, &[Term])]) -> Uncertain {
        let mut terms: Vec<Term> = Vec::new();
        for (c, ts) in parts {
            for t in ts.iter() {
                match terms.binary_search_by_key(&t.source, |x| x.source) {
                    Ok(i) => terms[i].coeff += c * t.coeff,
                    Err(i) => terms.insert(
                        i,
                        Term {
                            coeff: c * t.coeff,
                            ..*t
                        },
                    ),
                }
            }
        }
        Uncertain { mean, terms }
    }
}

/// Forward-mode perturbation: `primal + tangent·ε_tag`.
///
/// A dual with tag `t` only ever contains duals with smaller tags, so nested
/// differentiation never confuses perturbations of different levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub tag: u64,
    pub primal: Value,
    pub tangent: Value,
}

/// A fresh, never-before-used perturbation tag.
pub fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(i64),
    Bool(bool),
    Vec(Vec<f64>),
    Uncertain(Uncertain),
    Dual(Box<Dual>),
    /// Additive identity for cotangents and tangents of any shape.
    Zero,
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Real(_) => ValueKind::Real,
            Value::Int(_) => ValueKind::Int,
            Value::Bool(_) => ValueKind::Bool,
            Value::Vec(_) => ValueKind::Vec,
            Value::Uncertain(_) => ValueKind::Uncertain,
            Value::Dual(_) => ValueKind::Dual,
            Value::Zero => ValueKind::Zero,
        }
    }

    /// The kind this value behaves as once perturbations and error terms are
    /// stripped: uncertain values are real, duals take their primal's kind.
    pub fn base_kind(&self) -> ValueKind {
        match self {
            Value::Uncertain(_) => ValueKind::Real,
            Value::Dual(d) => d.primal.base_kind(),
            v => v.kind(),
        }
    }

    pub fn uncertain(mean: f64, sigma: f64) -> Value {
        Value::Uncertain(Uncertain::new(mean, sigma))
    }

    /// Build a dual, collapsing to the primal when the tangent is zero.
    pub fn dual(tag: u64, primal: Value, tangent: Value) -> Value {
        if tangent.is_zero() {
            primal
        } else {
            Value::Dual(Box::new(Dual {
                tag,
                primal,
                tangent,
            }))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Value::Zero)
    }

    /// Tag of the outermost perturbation, if any.
    pub fn tag(&self) -> Option<u64> {
        match self {
            Value::Dual(d) => Some(d.tag),
            _ => None,
        }
    }

    /// Split into (primal, tangent) with respect to `tag`.
    pub fn split(&self, tag: u64) -> (Value, Value) {
        match self {
            Value::Dual(d) if d.tag == tag => (d.primal.clone(), d.tangent.clone()),
            v => (v.clone(), Value::Zero),
        }
    }

    /// The tangent with respect to `tag`, or zero when independent of it.
    pub fn tangent(&self, tag: u64) -> Value {
        self.split(tag).1
    }

    /// Innermost plain number: strips duals and error terms.
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            Value::Int(i) => Some(*i as f64),
            Value::Uncertain(u) => Some(u.mean),
            Value::Dual(d) => d.primal.scalar(),
            Value::Zero => Some(0.0),
            Value::Bool(_) | Value::Vec(_) => None,
        }
    }

    pub fn as_vec(&self) -> Option<&[f64]> {
        match self {
            Value::Vec(v) => Some(v),
            _ => None,
        }
    }

    /// Replace a zero marker by a concrete zero shaped like `like`.
    pub fn materialize(self, like: &Value) -> Value {
        match (self, like.base_kind()) {
            (Value::Zero, ValueKind::Real) => Value::Real(0.0),
            (Value::Zero, ValueKind::Vec) => {
                let n = like.primal_vec().map_or(0, |v| v.len());
                Value::Vec(vec![0.0; n])
            }
            (v, _) => v,
        }
    }

    fn primal_vec(&self) -> Option<&[f64]> {
        match self {
            Value::Vec(v) => Some(v),
            Value::Dual(d) => d.primal.primal_vec(),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Real(v) => real_json(*v),
            Value::Int(i) => json!(i),
            Value::Bool(b) => json!(b),
            Value::Vec(v) => serde_json::Value::Array(v.iter().map(|x| real_json(*x)).collect()),
            Value::Uncertain(u) => json!({ "mean": real_json(u.mean), "sigma": real_json(u.sigma()) }),
            Value::Dual(d) => json!({ "primal": d.primal.to_json(), "tangent": d.tangent.to_json() }),
            Value::Zero => serde_json::Value::Null,
        }
    }
}

fn real_json(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or_else(|| serde_json::Value::String(format_real(v)))
}

/// Shortest decimal text that reads back as the same `f64`.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else {
        format!("{v:?}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(v) => f.write_str(&format_real(*v)),
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Vec(v) => {
                let parts: Vec<String> = v.iter().map(|x| format_real(*x)).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            Value::Uncertain(u) => write!(f, "{} ± {}", format_real(u.mean), format_real(u.sigma())),
            Value::Dual(d) => write!(f, "{}", d.primal),
            Value::Zero => f.write_str("0"),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Vec(v)
    }
}
