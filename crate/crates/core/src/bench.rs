//! Fixed per-operation overhead of pullbacks, estimated by timing backward
//! passes over shrinking vectors and extrapolating the line to zero work.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::reverse::{AugmentedResult, Engine};
use crate::runtime::{NullSink, RuntimeError, Value};

pub const MIN_REPS: usize = 30;
pub const MIN_R_SQUARED: f64 = 0.95;

const STACK_FN: &str = "stack";
/// Target duration of one timed sample, in nanoseconds.
const SAMPLE_NS: f64 = 500_000.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("unstable timing: {what} has R^2 = {r_squared:.4} (below {MIN_R_SQUARED})")]
    Unstable { what: String, r_squared: f64, report: Box<OverheadReport> },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{0}")]
    Compile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    /// Number of stacked blocks in each program variant.
    pub blocks: Vec<usize>,
    /// Vector lengths, strictly decreasing.
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            blocks: vec![1, 2, 3],
            sizes: vec![120, 104, 88, 72, 56, 40, 24, 8],
            reps: 200,
            warmup: 5,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.reps == 0 {
            return Err(BenchError::Config("repetitions must be positive".into()));
        }
        if self.reps < MIN_REPS {
            return Err(BenchError::Config(format!("at least {MIN_REPS} repetitions are required, got {}", self.reps)));
        }
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err(BenchError::Config("block counts must be positive and non-empty".into()));
        }
        if self.sizes.len() < 2 {
            return Err(BenchError::Config("at least two sizes are needed for a fit".into()));
        }
        if self.sizes.windows(2).any(|w| w[0] <= w[1]) {
            return Err(BenchError::Config("sizes must be strictly decreasing".into()));
        }
        if self.sizes.contains(&0) {
            return Err(BenchError::Config("sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Fit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Fit { intercept, slope, r_squared }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub blocks: usize,
    pub op_count: usize,
    /// Fixed overhead of one backward pass: the fitted time at size zero, ns.
    pub total_overhead_ns: f64,
    pub overhead_per_op_ns: f64,
    pub ns_per_element: f64,
    pub r_squared: f64,
    /// (size, lower-quartile ns per backward pass)
    pub samples: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub config: BenchConfig,
    pub variants: Vec<VariantReport>,
    /// max/min of the per-op overheads.
    pub overhead_spread: f64,
    /// Size at which runtime was regressed on op count.
    pub linearity_size: usize,
    pub linearity_r_squared: f64,
}

/// Block `j` of the benchmark program: ten vector and six scalar
/// operations over the state (`a`, `v`) and the inputs `u`, `w`.
fn block(j: usize) -> String {
    format!(
        "    v = axpy(a, u, v);
    let d{j} = dot(v, w);
    let t{j} = tanh(d{j} * 0.001);
    v = v * 0.5;
    v = axpy(t{j}, w, v);
    v = v + u * t{j};
    v = v - w * 0.25;
    let s{j} = sum(v);
    let e{j} = dot(v, u);
    a = a * 0.5 + (e{j} + s{j}) * 0.001;
"
    )
}

/// A program whose body repeats the benchmark block `blocks` times.
pub fn stacked_source(blocks: usize) -> String {
    let mut src = format!("fn {STACK_FN}(a, u: vec, w: vec) {{\n    let v = u;\n");
    for j in 1..=blocks {
        src.push_str(&block(j));
    }
    src.push_str("    return a + sum(v);\n}\n");
    src
}

/// Inputs for the benchmark program with vectors of length `n`.
pub fn stacked_args(n: usize) -> Vec<Value> {
    let u = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let w = (0..n).map(|i| (i as f64 * 0.21).cos()).collect();
    vec![Value::Real(0.3), Value::Vec(u), Value::Vec(w)]
}

/// Adjoint-rule invocations in one backward pass of `name` at `args`.
pub fn count_ops(engine: &Engine, name: &str, args: &[Value]) -> Result<usize, RuntimeError> {
    let aug = engine.vjp(name, args)?;
    let (_, n) = aug.pull_counted(&Value::Real(1.0))?;
    Ok(n)
}

fn time_pull(aug: &AugmentedResult, inner: usize) -> Result<f64, RuntimeError> {
    let one = Value::Real(1.0);
    let start = Instant::now();
    for _ in 0..inner {
        std::hint::black_box(aug.pull(&one)?);
    }
    Ok(start.elapsed().as_nanos() as f64 / inner as f64)
}

/// Lower quartile, by the nearest-rank method.
fn lower_quartile(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let rank = (xs.len() as f64 * 0.25).ceil().max(1.0) as usize;
    xs[rank - 1]
}

/// Lower-quartile time of one backward pass per result, in nanoseconds.
/// Results are visited round-robin within each repetition so slow drift in
/// machine speed spreads evenly over the sweep; the lower quartile discards
/// samples stretched by preemption.
fn measure(augs: &[AugmentedResult], reps: usize, warmup: usize) -> Result<Vec<f64>, RuntimeError> {
    let mut inner = Vec::with_capacity(augs.len());
    for aug in augs {
        let probe = time_pull(aug, 1)?.max(1.0);
        inner.push(((SAMPLE_NS / probe).ceil() as usize).clamp(1, 10_000));
    }
    let mut samples = vec![Vec::with_capacity(reps); augs.len()];
    for rep in 0..warmup + reps {
        for (i, aug) in augs.iter().enumerate() {
            let t = time_pull(aug, inner[i])?;
            if rep >= warmup {
                samples[i].push(t);
            }
        }
    }
    Ok(samples.into_iter().map(lower_quartile).collect())
}

/// Time backward passes of each stacked variant over the configured sizes.
/// Runs on the calling thread only.
pub fn run_overhead_bench(config: &BenchConfig) -> Result<OverheadReport, BenchError> {
    config.validate()?;
    let mut engines = Vec::new();
    let mut augs = Vec::new();
    for &blocks in &config.blocks {
        let engine = Engine::from_source(&stacked_source(blocks))
            .map_err(|e| BenchError::Compile(e.to_string()))?
            .with_sink(Arc::new(NullSink));
        for &n in &config.sizes {
            augs.push(engine.vjp(STACK_FN, &stacked_args(n))?);
        }
        let ops = count_ops(&engine, STACK_FN, &stacked_args(config.sizes[0]))?;
        engines.push((blocks, ops));
    }
    // Every (variant, size) pair is timed in the same round-robin sweep.
    let times = measure(&augs, config.reps, config.warmup)?;

    let mut variants = Vec::new();
    for (chunk, &(blocks, op_count)) in times.chunks(config.sizes.len()).zip(&engines) {
        let samples: Vec<(usize, f64)> = config.sizes.iter().copied().zip(chunk.iter().copied()).collect();
        let xs: Vec<f64> = samples.iter().map(|s| s.0 as f64).collect();
        let fit = linear_fit(&xs, chunk);
        variants.push(VariantReport {
            blocks,
            op_count,
            total_overhead_ns: fit.intercept,
            overhead_per_op_ns: fit.intercept / op_count as f64,
            ns_per_element: fit.slope,
            r_squared: fit.r_squared,
            samples,
        });
    }

    let per_op: Vec<f64> = variants.iter().map(|v| v.overhead_per_op_ns).collect();
    let max = per_op.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = per_op.iter().copied().fold(f64::INFINITY, f64::min);
    let linearity_size = *config.sizes.last().expect("validated");
    let ops: Vec<f64> = variants.iter().map(|v| v.op_count as f64).collect();
    let times: Vec<f64> = variants
        .iter()
        .map(|v| v.samples.last().expect("validated").1)
        .collect();
    let linearity = if variants.len() >= 2 { linear_fit(&ops, &times).r_squared } else { 1.0 };

    let report = OverheadReport {
        config: config.clone(),
        variants,
        overhead_spread: if min > 0.0 { max / min } else { f64::INFINITY },
        linearity_size,
        linearity_r_squared: linearity,
    };
    if let Some(v) = report.variants.iter().find(|v| v.r_squared < MIN_R_SQUARED) {
        return Err(BenchError::Unstable {
            what: format!("the {}-block fit", v.blocks),
            r_squared: v.r_squared,
            report: Box::new(report.clone()),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine(src: &str) -> Engine {
        Engine::from_source(src).unwrap().with_sink(Arc::new(NullSink))
    }

    #[test]
    fn polynomial_has_four_ops() {
        let e = engine("fn f(x) { return x^2.0 + 3.0*x + 1.0; }");
        assert_eq!(count_ops(&e, "f", &[Value::Real(1.0 / 3.0)]).unwrap(), 4);
    }

    #[test]
    fn identity_has_no_ops() {
        let e = engine("fn id(x) { return x; }");
        assert_eq!(count_ops(&e, "id", &[Value::Real(2.0)]).unwrap(), 0);
    }

    #[test]
    fn stacked_blocks_scale_op_count() {
        let count = |k| {
            let e = engine(&stacked_source(k));
            count_ops(&e, STACK_FN, &stacked_args(8)).unwrap()
        };
        let (c1, c2, c3) = (count(1), count(2), count(3));
        let per_block = c2 - c1;
        assert_eq!(per_block, 16);
        assert_eq!(c3 - c2, per_block);
        // The final `a + sum(v)` contributes two operations outside the blocks.
        assert_eq!(c1, per_block + 2);
    }

    #[test]
    fn config_validation() {
        let ok = BenchConfig::default();
        assert!(ok.validate().is_ok());
        let zero = BenchConfig { reps: 0, ..ok.clone() };
        assert!(matches!(zero.validate(), Err(BenchError::Config(_))));
        let few = BenchConfig { reps: 5, ..ok.clone() };
        assert!(few.validate().is_err());
        let rising = BenchConfig { sizes: vec![2, 4, 8], ..ok.clone() };
        assert!(rising.validate().is_err());
        assert!(run_overhead_bench(&BenchConfig { reps: 0, ..ok }).is_err());
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let f = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[5.0, 7.0, 9.0, 11.0]);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_quartile_by_rank() {
        assert_eq!(lower_quartile(vec![4.0, 1.0, 3.0, 2.0]), 1.0);
        assert_eq!(lower_quartile((1..=8).rev().map(f64::from).collect()), 2.0);
        assert_eq!(lower_quartile(vec![7.0]), 7.0);
    }
}
