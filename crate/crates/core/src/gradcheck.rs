//! Finite-difference oracle and the checks built on it.
//!
//! The oracle evaluates programs with the plain interpreter only. Analytic
//! gradients come from the engine in the requested mode and are compared
//! component by component with `|analytic - numeric| <= atol + rtol*|numeric|`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{CorpusEntry, Mode, ParamSpec};
use crate::reverse::Engine;
use crate::runtime::{AdjointRule, NullSink, RuleRegistry, RuntimeError, Value, ValueKind};

pub const DEFAULT_RTOL: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-9;
pub const DEFAULT_SEED: u64 = 20190117;
/// Inputs kept per (entry, mode) by [`run_suite`].
pub const SUITE_POINTS: usize = 8;
/// Random points per rule in [`check_rules`].
pub const RULE_POINTS: usize = 32;

const MAX_DRAWS: usize = 200;

pub fn default_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Relative error against `numeric`, falling back to the absolute error
/// when `numeric` is zero.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let abs = (analytic - numeric).abs();
    if numeric == 0.0 {
        abs
    } else {
        abs / numeric.abs()
    }
}

pub fn within(analytic: f64, numeric: f64, rtol: f64, atol: f64) -> bool {
    (analytic - numeric).abs() <= atol + rtol * numeric.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdComponent {
    pub index: usize,
    pub value: f64,
    pub step: f64,
    /// The evaluations at x+h and x-h took different control paths.
    pub unreliable: bool,
}

/// Central differences for every real argument of `name`. Other arguments
/// are held fixed and get no component.
pub fn fd_gradient(engine: &Engine, name: &str, args: &[Value], h: Option<f64>) -> Result<Vec<FdComponent>, RuntimeError> {
    let args = engine.prepare_args(name, args)?;
    let mut out = Vec::new();
    for (i, a) in args.iter().enumerate() {
        let Value::Real(x) = *a else { continue };
        let step = h.unwrap_or_else(|| default_step(x));
        let at = |v: f64| {
            let mut shifted = args.clone();
            shifted[i] = Value::Real(v);
            let (y, trace) = engine.run_traced(name, &shifted)?;
            let y = y
                .scalar()
                .ok_or_else(|| RuntimeError::NonScalarOutput(name.to_string()))?;
            Ok::<_, RuntimeError>((y, trace))
        };
        let (hi, trace_hi) = at(x + step)?;
        let (lo, trace_lo) = at(x - step)?;
        out.push(FdComponent {
            index: i,
            value: (hi - lo) / (2.0 * step),
            step,
            unreliable: trace_hi != trace_lo,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub function: String,
    pub args: Vec<serde_json::Value>,
    pub mode: Mode,
    pub entries: Vec<CheckEntry>,
    pub pass: bool,
    pub step: Vec<f64>,
    /// A branch flip was detected; the point carries no verdict.
    pub excluded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }
}

fn analytic_gradient(engine: &Engine, name: &str, args: &[Value], mode: Mode) -> Result<Vec<Value>, RuntimeError> {
    match mode {
        Mode::Reverse => engine.gradient(name, args),
        Mode::Forward => engine.forward_gradient(name, args),
        Mode::Mixed => match args.split_last() {
            Some((Value::Vec(noise), params)) => {
                let mut g = engine.mixed_gradient(name, params, noise)?;
                g.push(Value::Zero);
                Ok(g)
            }
            _ => engine.forward_gradient(name, args),
        },
    }
}

/// Compare the gradient from `mode` against central differences at `args`.
pub fn check(engine: &Engine, name: &str, args: &[Value], mode: Mode, rtol: f64, atol: f64) -> CheckReport {
    let mut report = CheckReport {
        function: name.to_string(),
        args: args.iter().map(Value::to_json).collect(),
        mode,
        entries: Vec::new(),
        pass: false,
        step: Vec::new(),
        excluded: false,
        error: None,
    };
    let result = fd_gradient(engine, name, args, None)
        .and_then(|fd| analytic_gradient(engine, name, args, mode).map(|g| (fd, g)));
    let (fd, grad) = match result {
        Ok(r) => r,
        Err(e) => {
            report.error = Some(e.to_string());
            return report;
        }
    };
    report.excluded = fd.iter().any(|c| c.unreliable);
    for c in fd {
        let analytic = grad.get(c.index).and_then(Value::scalar).unwrap_or(f64::NAN);
        let abs_err = (analytic - c.value).abs();
        report.step.push(c.step);
        report.entries.push(CheckEntry {
            index: c.index,
            analytic,
            numeric: c.value,
            abs_err,
            rel_err: rel_error(analytic, c.value),
            pass: within(analytic, c.value, rtol, atol),
        });
    }
    report.pass = report.entries.iter().all(|e| e.pass);
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleCheck {
    pub rule: String,
    pub kinds: Vec<&'static str>,
    pub points: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn sample_input(rng: &mut ChaCha8Rng, positive: bool) -> f64 {
    let m = rng.random_range(0.2..2.0);
    if positive || rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn check_rule(rule: &AdjointRule, rng: &mut ChaCha8Rng, points: usize, rtol: f64, atol: f64) -> RuleCheck {
    let positive = matches!(rule.name.as_str(), "log" | "sqrt" | "pow");
    let mut failures = 0;
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..points {
        let xs: Vec<f64> = rule.kinds.iter().map(|_| sample_input(rng, positive)).collect();
        let z = rng.random_range(-2.0..2.0);
        let args: Vec<Value> = xs.iter().map(|&x| Value::Real(x)).collect();
        let cots = rule.apply(&args).and_then(|(_, pb)| pb(&Value::Real(z)));
        let ok = cots.and_then(|cots| {
            let mut all = true;
            for (i, c) in cots.iter().enumerate() {
                let h = default_step(xs[i]);
                let eval = |d: f64| {
                    let mut shifted = args.clone();
                    shifted[i] = Value::Real(xs[i] + d);
                    (rule.primal)(&shifted).map(|v| v.scalar().unwrap_or(f64::NAN))
                };
                let numeric = z * (eval(h)? - eval(-h)?) / (2.0 * h);
                let analytic = c.scalar().unwrap_or(0.0);
                max_rel_err = max_rel_err.max(rel_error(analytic, numeric));
                all &= within(analytic, numeric, rtol, atol);
            }
            Ok::<_, RuntimeError>(all)
        });
        if !matches!(ok, Ok(true)) {
            failures += 1;
        }
    }
    RuleCheck {
        rule: rule.name.clone(),
        kinds: rule.kinds.iter().map(|k| k.name()).collect(),
        points,
        failures,
        max_rel_err,
        pass: failures == 0,
    }
}

/// Check the pullback of every all-real rule in `registry` against central
/// differences of its primal, with a random output cotangent per point.
pub fn check_rules(registry: &RuleRegistry, seed: u64, points: usize) -> Vec<RuleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    registry
        .keys()
        .into_iter()
        .filter(|(_, kinds)| !kinds.is_empty() && kinds.iter().all(|k| *k == ValueKind::Real))
        .filter_map(|(name, kinds)| registry.lookup(&name, &kinds))
        .map(|rule| check_rule(&rule, &mut rng, points, DEFAULT_RTOL, DEFAULT_ATOL))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntrySummary {
    pub name: String,
    pub mode: Mode,
    pub kept: usize,
    pub excluded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub seed: u64,
    pub rtol: f64,
    pub atol: f64,
    pub checks: usize,
    pub passed: usize,
    pub failed: usize,
    pub excluded: usize,
    pub entries: Vec<EntrySummary>,
    pub failures: Vec<CheckReport>,
}

impl SuiteSummary {
    /// No failures and every (entry, mode) reached its quota of points.
    pub fn ok(&self, quota: usize) -> bool {
        self.failed == 0 && self.entries.iter().all(|e| e.kept >= quota)
    }
}

fn entry_seed(seed: u64, index: usize, mode: Mode) -> u64 {
    let m = match mode {
        Mode::Reverse => 1,
        Mode::Forward => 2,
        Mode::Mixed => 3,
    };
    seed ^ ((index as u64 + 1) << 32) ^ m
}

fn sample_args(spec: &[ParamSpec], rng: &mut ChaCha8Rng) -> Vec<Value> {
    spec.iter()
        .map(|p| match p {
            ParamSpec::Range(lo, hi) => Value::Real(rng.random_range(*lo..*hi)),
            ParamSpec::Fixed(v) => v.clone(),
        })
        .collect()
}

/// Sample `points` usable inputs per (entry, mode) and check each of them.
/// Points adjacent to a branch flip are redrawn.
pub fn run_suite(corpus: &[CorpusEntry], seed: u64, points: usize) -> SuiteSummary {
    let mut summary = SuiteSummary {
        seed,
        rtol: DEFAULT_RTOL,
        atol: DEFAULT_ATOL,
        checks: 0,
        passed: 0,
        failed: 0,
        excluded: 0,
        entries: Vec::new(),
        failures: Vec::new(),
    };
    for (index, entry) in corpus.iter().enumerate() {
        let engine = match Engine::from_source(entry.source) {
            Ok(e) => e.with_sink(Arc::new(NullSink)),
            Err(e) => {
                summary.failed += 1;
                summary.failures.push(CheckReport {
                    function: entry.entry.to_string(),
                    args: Vec::new(),
                    mode: Mode::Reverse,
                    entries: Vec::new(),
                    pass: false,
                    step: Vec::new(),
                    excluded: false,
                    error: Some(format!("{}: {e}", entry.name)),
                });
                continue;
            }
        };
        for &mode in &entry.modes {
            let mut rng = ChaCha8Rng::seed_from_u64(entry_seed(seed, index, mode));
            let mut row = EntrySummary { name: entry.name.to_string(), mode, kept: 0, excluded: 0, failed: 0 };
            let mut draws = 0;
            while row.kept < points && draws < MAX_DRAWS {
                draws += 1;
                let args = sample_args(&entry.params, &mut rng);
                let report = check(&engine, entry.entry, &args, mode, DEFAULT_RTOL, DEFAULT_ATOL);
                if report.excluded && report.error.is_none() {
                    row.excluded += 1;
                    continue;
                }
                row.kept += 1;
                if !report.pass {
                    row.failed += 1;
                    summary.failures.push(report);
                }
            }
            summary.checks += row.kept;
            summary.failed += row.failed;
            summary.passed += row.kept - row.failed;
            summary.excluded += row.excluded;
            summary.entries.push(row);
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{algebra, PullbackFn};

    fn engine(src: &str) -> Engine {
        Engine::from_source(src).unwrap().with_sink(Arc::new(NullSink))
    }

    #[test]
    fn fd_of_polynomial() {
        let e = engine("fn f(x) { return x^2.0 + 3.0*x + 1.0; }");
        let g = fd_gradient(&e, "f", &[Value::Real(1.0 / 3.0)], None).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g[0].value - 11.0 / 3.0).abs() < 1e-9);
        assert!(!g[0].unreliable);
    }

    #[test]
    fn fd_of_constant_is_zero() {
        let e = engine("fn c(x) { return 4.0; }");
        let g = fd_gradient(&e, "c", &[Value::Real(0.7)], None).unwrap();
        assert!(g[0].value.abs() < 1e-9);
    }

    #[test]
    fn fd_skips_integer_arguments() {
        let e = engine("fn f(x, n: int) { return x * real(n); }");
        let g = fd_gradient(&e, "f", &[Value::Real(2.0), Value::Int(3)], None).unwrap();
        assert_eq!(g.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn step_scales_with_magnitude() {
        assert_eq!(default_step(0.5), f64::EPSILON.cbrt());
        assert_eq!(default_step(-4.0), 4.0 * f64::EPSILON.cbrt());
    }

    #[test]
    fn branch_flip_is_flagged() {
        let e = engine("fn p(x) { if x > 0.0 { return x^2.0; } else { return -x; } }");
        let g = fd_gradient(&e, "p", &[Value::Real(1e-7)], None).unwrap();
        assert!(g[0].unreliable);
        let r = check(&e, "p", &[Value::Real(1e-7)], Mode::Reverse, DEFAULT_RTOL, DEFAULT_ATOL);
        assert!(r.excluded);
    }

    #[test]
    fn check_reports_errors_as_failures() {
        let e = engine("fn v(x, u: vec) -> vec { return axpy(x, u, u); }");
        let args = [Value::Real(1.0), Value::Vec(vec![1.0, 2.0])];
        let r = check(&e, "v", &args, Mode::Reverse, DEFAULT_RTOL, DEFAULT_ATOL);
        assert!(!r.pass);
        assert!(r.error.is_some());
    }

    #[test]
    fn builtin_rules_pass() {
        let results = check_rules(&RuleRegistry::with_builtins(), DEFAULT_SEED, RULE_POINTS);
        assert!(results.len() >= 14);
        for r in &results {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn corrupted_product_rule_is_caught() {
        let mut reg = RuleRegistry::with_builtins();
        reg.register(AdjointRule::new(
            "*",
            vec![ValueKind::Real, ValueKind::Real],
            |a| algebra::apply(crate::ir::PrimOp::Mul, a),
            |a, _| {
                let (x, y) = (a[0].clone(), a[1].clone());
                let pb: PullbackFn = Arc::new(move |z| Ok(vec![algebra::mul(z, &y)?, x.clone()]));
                pb
            },
        ))
        .unwrap();
        let results = check_rules(&reg, DEFAULT_SEED, RULE_POINTS);
        let mul = results.iter().find(|r| r.rule == "mul").unwrap();
        assert!(!mul.pass);
        assert!(mul.failures > 0 && mul.max_rel_err > 1e-3);
        assert!(results.iter().filter(|r| r.rule != "mul").all(|r| r.pass));
    }

    #[test]
    fn empty_suite_has_no_checks() {
        let s = run_suite(&[], DEFAULT_SEED, SUITE_POINTS);
        assert_eq!((s.checks, s.failed), (0, 0));
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["seed"], DEFAULT_SEED);
    }
}
