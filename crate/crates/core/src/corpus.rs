//! Bundled example programs with sampling ranges and reference results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::runtime::Value;

/// Seed and length of the fixed noise path used by `sde_gbm`.
pub const NOISE_SEED: u64 = 1729;
pub const NOISE_STEPS: usize = 64;

const NOISE_JSON: &str = include_str!("../corpus/sde_gbm_noise.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reverse,
    Forward,
    Mixed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Reverse => "reverse",
            Mode::Forward => "forward",
            Mode::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "reverse" => Ok(Mode::Reverse),
            "forward" => Ok(Mode::Forward),
            "mixed" => Ok(Mode::Mixed),
            other => Err(format!("unknown mode '{other}' (expected reverse, forward or mixed)")),
        }
    }
}

/// How a single argument is chosen when the gradient checker samples inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSpec {
    /// Uniform over `[lo, hi]`; this argument is differentiated.
    Range(f64, f64),
    /// Held at a fixed value.
    Fixed(Value),
}

/// A known input/output pair for an entry function.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub args: Vec<Value>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub note: &'static str,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: &'static str,
    pub source: &'static str,
    pub entry: &'static str,
    pub params: Vec<ParamSpec>,
    pub modes: Vec<Mode>,
    pub references: Vec<Reference>,
}

impl CorpusEntry {
    /// Argument vector with every ranged parameter at its midpoint.
    pub fn midpoint_args(&self) -> Vec<Value> {
        self.params
            .iter()
            .map(|p| match p {
                ParamSpec::Range(lo, hi) => Value::Real(0.5 * (lo + hi)),
                ParamSpec::Fixed(v) => v.clone(),
            })
            .collect()
    }
}

/// Standard normal increments drawn from ChaCha8 with the given seed.
pub fn generate_noise(seed: u64, steps: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// The checked-in noise path for `sde_gbm`.
pub fn sde_noise() -> Vec<f64> {
    serde_json::from_str(NOISE_JSON).expect("bundled noise path is valid JSON")
}

fn real(x: f64) -> Value {
    Value::Real(x)
}

pub fn entries() -> Vec<CorpusEntry> {
    let both = vec![Mode::Reverse, Mode::Forward];
    vec![
        CorpusEntry {
            name: "taylor_sine",
            source: include_str!("../corpus/taylor_sine.dp"),
            entry: "s",
            params: vec![ParamSpec::Range(-2.0, 2.0)],
            modes: both.clone(),
            references: vec![Reference {
                args: vec![real(1.0)],
                value: 0.841470984648068,
                gradient: vec![0.540302303791887],
                note: "partial sums of the sine series through x^11/11!",
            }],
        },
        CorpusEntry {
            name: "poly",
            source: include_str!("../corpus/poly.dp"),
            entry: "f",
            params: vec![ParamSpec::Range(-3.0, 3.0)],
            modes: both.clone(),
            references: vec![
                Reference {
                    args: vec![real(1.0 / 3.0)],
                    value: 2.111111111111111,
                    gradient: vec![3.6666666666666665],
                    note: "2x + 3",
                },
                Reference {
                    args: vec![Value::uncertain(1.0 / 3.0, 0.01)],
                    value: 2.111111111111111,
                    gradient: vec![3.6666666666666665],
                    note: "uncertain input; the gradient carries sigma 0.02",
                },
            ],
        },
        CorpusEntry {
            name: "piecewise",
            source: include_str!("../corpus/piecewise.dp"),
            entry: "p",
            params: vec![ParamSpec::Range(-2.0, 2.0)],
            modes: both.clone(),
            references: vec![
                Reference { args: vec![real(1.5)], value: 2.25, gradient: vec![3.0], note: "right branch" },
                Reference { args: vec![real(-1.5)], value: 1.5, gradient: vec![-1.0], note: "left branch" },
            ],
        },
        CorpusEntry {
            name: "fanout",
            source: include_str!("../corpus/fanout.dp"),
            entry: "h",
            params: vec![ParamSpec::Range(-3.0, 3.0)],
            modes: both.clone(),
            references: vec![Reference {
                args: vec![real(2.0)],
                value: 6.0,
                gradient: vec![5.0],
                note: "1 + 2x",
            }],
        },
        CorpusEntry {
            name: "newton_bond",
            source: include_str!("../corpus/newton_bond.dp"),
            entry: "price",
            params: vec![ParamSpec::Range(0.01, 0.10)],
            modes: both.clone(),
            references: vec![],
        },
        CorpusEntry {
            name: "projectile",
            source: include_str!("../corpus/projectile.dp"),
            entry: "range",
            params: vec![ParamSpec::Range(0.3, 1.2)],
            modes: both.clone(),
            references: vec![],
        },
        CorpusEntry {
            name: "sde_gbm",
            source: include_str!("../corpus/sde_gbm.dp"),
            entry: "loss",
            params: vec![
                ParamSpec::Range(-0.5, 0.5),
                ParamSpec::Range(0.05, 0.4),
                ParamSpec::Fixed(Value::Vec(sde_noise())),
            ],
            modes: vec![Mode::Reverse, Mode::Forward, Mode::Mixed],
            references: vec![],
        },
        CorpusEntry {
            name: "recurse",
            source: include_str!("../corpus/recurse.dp"),
            entry: "main",
            params: vec![ParamSpec::Range(-1.5, 1.5)],
            modes: both,
            references: vec![Reference {
                args: vec![real(2.0)],
                value: 128.0,
                gradient: vec![448.0],
                note: "7x^6",
            }],
        },
    ]
}

pub fn find(name: &str) -> Option<CorpusEntry> {
    entries().into_iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_compiles() {
        for e in entries() {
            let m = crate::compile(e.source).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert!(m.get(e.entry).is_some(), "{} lacks {}", e.name, e.entry);
        }
    }

    #[test]
    fn noise_file_matches_generator() {
        assert_eq!(sde_noise(), generate_noise(NOISE_SEED, NOISE_STEPS));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Reverse, Mode::Forward, Mode::Mixed] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("sideways".parse::<Mode>().is_err());
    }
}
