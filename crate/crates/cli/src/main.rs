use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use diffprog_core::bench::{run_overhead_bench, BenchConfig, BenchError};
use diffprog_core::corpus::{self, Mode};
use diffprog_core::gradcheck::{self, DEFAULT_ATOL, DEFAULT_RTOL, DEFAULT_SEED, RULE_POINTS, SUITE_POINTS};
use diffprog_core::ir::{print_ir, Kind};
use diffprog_core::runtime::{format_real, NullSink, StdoutSink, ValueKind};
use diffprog_core::{adjoint_module, Engine, Error, RuntimeError, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "dp", version, about = "Run, differentiate and check programs in the dp language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a function and print its value.
    Run(Invocation),
    /// Print the gradient of a scalar function.
    Grad {
        #[command(flatten)]
        call: Invocation,
        #[arg(long, default_value = "reverse")]
        mode: Mode,
    },
    /// Compare AD gradients against central finite differences.
    Check(CheckArgs),
    /// Estimate the fixed per-operation overhead of pullbacks.
    Bench(BenchArgs),
    /// Print the IR of a program, optionally with generated adjoints.
    EmitIr {
        file: PathBuf,
        /// Append the augmented primal and pullback of each function.
        #[arg(long)]
        adjoint: bool,
        /// Restrict adjoint generation to one function.
        #[arg(long = "fn")]
        function: Option<String>,
    },
}

#[derive(Args)]
struct Output {
    /// Machine-readable JSON output (the default).
    #[arg(long, conflicts_with = "pretty")]
    json: bool,
    /// Human-readable output.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct Invocation {
    file: PathBuf,
    #[arg(long = "fn")]
    function: String,
    /// Comma-separated scalar arguments, in parameter order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    at: Vec<String>,
    /// Standard deviation for the next scalar argument; repeat per argument.
    #[arg(long)]
    sigma: Vec<f64>,
    /// JSON array used for the function's vector parameter.
    #[arg(long)]
    noise_file: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CheckArgs {
    /// Program to check; omit with --all or --rules.
    file: Option<PathBuf>,
    /// Check every corpus program in reverse and forward mode.
    #[arg(long)]
    all: bool,
    /// Check every builtin scalar adjoint rule.
    #[arg(long)]
    rules: bool,
    #[arg(long = "fn")]
    function: Option<String>,
    /// Point to check; when absent, points are sampled from [-2, 2].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    at: Vec<String>,
    #[arg(long)]
    noise_file: Option<PathBuf>,
    #[arg(long, default_value = "reverse")]
    mode: Mode,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RTOL)]
    rtol: f64,
    #[arg(long, default_value_t = DEFAULT_ATOL)]
    atol: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Also write the raw per-size timings (lower quartile, ns) as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

/// A failure with the exit status it maps to.
enum Failure {
    User(String),
    Internal(String),
    /// The result was printed; only the status signals failure.
    Quiet,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::Runtime(r) => r.into(),
            Error::Invalid(_) | Error::Transform(_) => Failure::Internal(e.to_string()),
            other => Failure::User(other.to_string()),
        }
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Failure {
        match e {
            RuntimeError::Tape(_) | RuntimeError::Transform(_) => Failure::Internal(e.to_string()),
            other => Failure::User(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn emit<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string(value).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::User(format!("cannot read {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Engine, Failure> {
    let source = read(path)?;
    Engine::from_source(&source).map_err(|e| {
        let f = Failure::from(e);
        match f {
            Failure::User(m) => Failure::User(format!("{}: {m}", path.display())),
            other => other,
        }
    })
}

fn read_noise(path: &Path) -> Result<Vec<f64>, Failure> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::User(format!("{}: expected a JSON array of numbers: {e}", path.display())))
}

fn parse_scalar(text: &str, kind: Kind) -> Result<Value, Failure> {
    let text = text.trim();
    let bad = || Failure::User(format!("cannot read '{text}' as {kind}"));
    match kind {
        Kind::Real => text.parse::<f64>().map(Value::Real).map_err(|_| bad()),
        Kind::Int => text.parse::<i64>().map(Value::Int).map_err(|_| bad()),
        Kind::Bool => text.parse::<bool>().map(Value::Bool).map_err(|_| bad()),
        Kind::Vec => Err(bad()),
    }
}

/// Build the argument list for `name`: scalars from `at` in order, vector
/// parameters from the noise file. Sigmas lift successive real arguments.
fn arguments(
    engine: &Engine,
    name: &str,
    at: &[String],
    sigma: &[f64],
    noise: Option<&Path>,
) -> Result<Vec<Value>, Failure> {
    let f = engine.function(name)?;
    let kinds = f.param_kinds();
    let scalars = kinds.iter().filter(|k| **k != Kind::Vec).count();
    if at.len() != scalars {
        return Err(Failure::User(format!(
            "'{name}' takes {scalars} scalar argument(s), --at gave {}",
            at.len()
        )));
    }
    if sigma.len() > scalars {
        return Err(Failure::User(format!("{} --sigma values for {scalars} scalar argument(s)", sigma.len())));
    }
    let noise = match noise {
        Some(p) => Some(read_noise(p)?),
        None => None,
    };
    let mut texts = at.iter();
    let mut sigmas = sigma.iter();
    let mut args = Vec::with_capacity(kinds.len());
    for k in kinds {
        if k == Kind::Vec {
            let v = noise
                .clone()
                .ok_or_else(|| Failure::User(format!("'{name}' has a vector parameter; pass --noise-file")))?;
            args.push(Value::Vec(v));
            continue;
        }
        let v = parse_scalar(texts.next().expect("counted"), k)?;
        args.push(match (sigmas.next(), v) {
            (Some(&s), Value::Real(m)) => Value::uncertain(m, s),
            (Some(_), other) => {
                return Err(Failure::User(format!("--sigma applies to real arguments, got {}", other.kind())))
            }
            (None, v) => v,
        });
    }
    Ok(args)
}

fn pretty_value(v: &Value) -> String {
    match v {
        Value::Uncertain(u) => format!("{} ± {}", format_real(u.mean), format_real(u.sigma())),
        other => other.to_string(),
    }
}

fn cmd_run(call: Invocation) -> Outcome {
    let engine = load(&call.file)?.with_sink(Arc::new(StdoutSink));
    let args = arguments(&engine, &call.function, &call.at, &call.sigma, call.noise_file.as_deref())?;
    let v = engine.run(&call.function, &args)?;
    if call.output.pretty {
        println!("{} = {}", call.function, pretty_value(&v));
        Ok(())
    } else {
        emit(&v.to_json())
    }
}

fn cmd_grad(call: Invocation, mode: Mode) -> Outcome {
    let engine = load(&call.file)?.with_sink(Arc::new(NullSink));
    let args = arguments(&engine, &call.function, &call.at, &call.sigma, call.noise_file.as_deref())?;
    let name = call.function.as_str();
    let grad = match mode {
        Mode::Reverse => engine.gradient(name, &args)?,
        Mode::Forward => engine.forward_gradient(name, &args)?,
        Mode::Mixed => {
            let (params, noise) = match args.split_last() {
                Some((Value::Vec(noise), params)) if !params.iter().any(|p| matches!(p, Value::Vec(_))) => {
                    (params.to_vec(), noise.clone())
                }
                _ => {
                    return Err(Failure::User(format!(
                        "mixed mode needs '{name}' to take a single trailing vector parameter"
                    )))
                }
            };
            engine.mixed_gradient(name, &params, &noise)?
        }
    };
    // Vector data and integer arguments have no reported gradient.
    let shown: Vec<(usize, &Value)> = grad
        .iter()
        .enumerate()
        .filter(|(i, _)| args[*i].base_kind() == ValueKind::Real)
        .collect();
    if call.output.pretty {
        for (i, g) in &shown {
            println!("d{name}/d(arg {}) = {}", i + 1, pretty_value(g));
        }
        return Ok(());
    }
    match shown.as_slice() {
        [(_, g)] => emit(&g.to_json()),
        many => emit(&many.iter().map(|(_, g)| g.to_json()).collect::<Vec<_>>()),
    }
}

fn cmd_check(c: CheckArgs) -> Outcome {
    if c.rules {
        let results = gradcheck::check_rules(&diffprog_core::RuleRegistry::with_builtins(), c.seed, RULE_POINTS);
        let ok = results.iter().all(|r| r.pass);
        if c.output.pretty {
            for r in &results {
                let verdict = if r.pass { "ok" } else { "FAIL" };
                println!("{verdict:4} {}({}) max rel err {:.3e}", r.rule, r.kinds.join(", "), r.max_rel_err);
            }
        } else {
            emit(&serde_json::json!({ "seed": c.seed, "rules": results }))?;
        }
        return if ok { Ok(()) } else { Err(Failure::Quiet) };
    }
    if c.all {
        let summary = gradcheck::run_suite(&corpus::entries(), c.seed, SUITE_POINTS);
        if c.output.pretty {
            for e in &summary.entries {
                println!(
                    "{:12} {:8} kept {:2} excluded {:2} failed {}",
                    e.name,
                    e.mode.as_str(),
                    e.kept,
                    e.excluded,
                    e.failed
                );
            }
            println!("{} checks, {} failed (seed {})", summary.checks, summary.failed, summary.seed);
        } else {
            emit(&summary)?;
        }
        return if summary.ok(SUITE_POINTS) { Ok(()) } else { Err(Failure::Quiet) };
    }
    let file = c
        .file
        .as_deref()
        .ok_or_else(|| Failure::User("pass a program file, --all or --rules".into()))?;
    let name = c
        .function
        .as_deref()
        .ok_or_else(|| Failure::User("--fn is required when checking a file".into()))?;
    let engine = load(file)?.with_sink(Arc::new(NullSink));
    let points: Vec<Vec<String>> = if c.at.is_empty() {
        let scalars = engine.function(name)?.param_kinds().iter().filter(|k| **k == Kind::Real).count();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        (0..SUITE_POINTS)
            .map(|_| (0..scalars).map(|_| format_real(rng.random_range(-2.0..2.0))).collect())
            .collect()
    } else {
        vec![c.at.clone()]
    };
    let mut reports = Vec::new();
    for at in &points {
        let args = arguments(&engine, name, at, &[], c.noise_file.as_deref())?;
        reports.push(gradcheck::check(&engine, name, &args, c.mode, c.rtol, c.atol));
    }
    let ok = reports.iter().all(|r| r.pass || r.excluded);
    if c.output.pretty {
        for r in &reports {
            let verdict = if r.excluded {
                "skip"
            } else if r.pass {
                "ok"
            } else {
                "FAIL"
            };
            println!("{verdict:4} {} at {:?} max rel err {:.3e}", r.function, r.args, r.max_rel_err());
        }
    } else if reports.len() == 1 {
        emit(&reports[0])?;
    } else {
        emit(&serde_json::json!({ "seed": c.seed, "reports": reports }))?;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Quiet)
    }
}

fn cmd_bench(b: BenchArgs) -> Outcome {
    let defaults = BenchConfig::default();
    let config = BenchConfig {
        blocks: b.blocks.unwrap_or(defaults.blocks),
        sizes: b.sizes.unwrap_or(defaults.sizes),
        reps: b.reps.unwrap_or(defaults.reps),
        warmup: b.warmup.unwrap_or(defaults.warmup),
    };
    let (report, failure) = match run_overhead_bench(&config) {
        Ok(r) => (r, None),
        Err(BenchError::Unstable { what, r_squared, report }) => {
            (*report, Some(format!("unstable timing: {what} has R^2 = {r_squared:.4}")))
        }
        Err(BenchError::Config(m)) => return Err(Failure::User(m)),
        Err(e @ BenchError::Runtime(_)) | Err(e @ BenchError::Compile(_)) => return Err(Failure::Internal(e.to_string())),
    };
    if let Some(path) = &b.csv {
        let mut csv = String::from("blocks,ops,size,time_ns\n");
        for v in &report.variants {
            for (n, t) in &v.samples {
                csv.push_str(&format!("{},{},{},{}\n", v.blocks, v.op_count, n, t));
            }
        }
        fs::write(path, csv).map_err(|e| Failure::User(format!("cannot write {}: {e}", path.display())))?;
    }
    if b.output.pretty {
        println!("blocks  ops  overhead(ns)  per-op(ns)  R^2");
        for v in &report.variants {
            println!(
                "{:6} {:4} {:13.1} {:11.1} {:7.4}",
                v.blocks, v.op_count, v.total_overhead_ns, v.overhead_per_op_ns, v.r_squared
            );
        }
        println!(
            "per-op spread (max/min) {:.3}; runtime vs ops R^2 {:.5}",
            report.overhead_spread, report.linearity_r_squared
        );
    } else {
        emit(&report)?;
    }
    match failure {
        Some(m) => Err(Failure::User(m)),
        None => Ok(()),
    }
}

fn cmd_emit_ir(file: &Path, adjoint: bool, function: Option<&str>) -> Outcome {
    let module = diffprog_core::compile(&read(file)?)?;
    if let Some(name) = function {
        if module.get(name).is_none() {
            return Err(Failure::User(format!("no function '{name}' in {}", file.display())));
        }
    }
    let module = if adjoint {
        adjoint_module(&module, function).map_err(|e| Failure::Internal(e.to_string()))?
    } else {
        module
    };
    print!("{}", print_ir(&module));
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Run(call) => cmd_run(call),
        Command::Grad { call, mode } => cmd_grad(call, mode),
        Command::Check(c) => cmd_check(c),
        Command::Bench(b) => cmd_bench(b),
        Command::EmitIr { file, adjoint, function } => cmd_emit_ir(&file, adjoint, function.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        // A closed pipe on stdout (`dp ... | head`) is not an error.
        let msg = info
            .payload()
            .downcast_ref::<String>()
            .map(String::as_str)
            .or_else(|| info.payload().downcast_ref::<&str>().copied())
            .unwrap_or("");
        if msg.contains("Broken pipe") {
            std::process::exit(0);
        }
        default_hook(info);
    }));
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::User(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Quiet)) => ExitCode::from(1),
        Ok(Err(Failure::Internal(m))) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
