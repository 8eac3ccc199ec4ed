use std::cell::Cell;
use std::io::Write;
use std::sync::Mutex;

use super::algebra;
use super::tape::{Control, Pullback, Tape, TapeCursor};
use super::value::Value;
use super::RuntimeError;
use crate::ir::{Callee, Instr, IrFunction, IrModule, Literal, PrintPart, Region};

type Result<T> = std::result::Result<T, RuntimeError>;

const MAX_CALL_DEPTH: usize = 256;

thread_local! {
    static CALL_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// Destination of `println` output. Implementations serialize their writes.
pub trait PrintSink: Send + Sync {
    fn write_line(&self, line: &str);
}

/// Writes each line to standard output.
#[derive(Debug, Default, Clone, Copy)]
pub struct StdoutSink;

impl PrintSink for StdoutSink {
    fn write_line(&self, line: &str) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
    }
}

/// Discards all output.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl PrintSink for NullSink {
    fn write_line(&self, _: &str) {}
}

/// Collects output lines in memory.
#[derive(Debug, Default)]
pub struct BufferSink {
    lines: Mutex<Vec<String>>,
}

impl BufferSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("sink poisoned").clone()
    }

    pub fn clear(&self) {
        self.lines.lock().expect("sink poisoned").clear();
    }
}

impl PrintSink for BufferSink {
    fn write_line(&self, line: &str) {
        self.lines.lock().expect("sink poisoned").push(line.to_string());
    }
}

/// Evaluates `partial` instructions: applies the callee through the rule
/// registry (or its generated adjoint) and returns the pullback to record.
pub trait PartialDispatch: Sync {
    fn dispatch(&self, callee: &Callee, args: &[Value]) -> Result<(Value, Pullback)>;
}

/// Big-step evaluator for IR functions.
///
/// The same machine runs plain functions, augmented primals (recording a
/// [`Tape`]) and generated pullbacks (replaying one).
pub struct Machine<'a> {
    module: &'a IrModule,
    sink: &'a dyn PrintSink,
    dispatch: Option<&'a dyn PartialDispatch>,
    tape: Tape,
    replay: Option<TapeCursor<'a>>,
    trace: Option<Vec<Control>>,
    invocations: usize,
}

impl<'a> Machine<'a> {
    pub fn new(module: &'a IrModule, sink: &'a dyn PrintSink) -> Self {
        Machine {
            module,
            sink,
            dispatch: None,
            tape: Tape::default(),
            replay: None,
            trace: None,
            invocations: 0,
        }
    }

    pub fn with_dispatch(mut self, dispatch: &'a dyn PartialDispatch) -> Self {
        self.dispatch = Some(dispatch);
        self
    }

    pub fn replaying(mut self, tape: &'a Tape) -> Self {
        self.replay = Some(tape.cursor());
        self
    }

    /// Record every branch decision and loop trip count, including those
    /// inside called functions.
    pub fn tracing(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn trace(&self) -> &[Control] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Number of adjoint-rule pullbacks applied so far.
    pub fn invocations(&self) -> usize {
        self.invocations
    }

    pub fn replay_exhausted(&self) -> bool {
        self.replay.as_ref().is_none_or(|c| c.is_exhausted())
    }

    pub fn call(&mut self, name: &str, args: Vec<Value>) -> Result<Vec<Value>> {
        let module = self.module;
        let f = module
            .get(name)
            .ok_or_else(|| RuntimeError::UnknownFunction(name.to_string()))?;
        self.call_function(f, args)
    }

    pub fn call_function(&mut self, f: &IrFunction, args: Vec<Value>) -> Result<Vec<Value>> {
        if args.len() != f.params.len() {
            return Err(RuntimeError::Arity(format!(
                "'{}' takes {} argument(s), got {}",
                f.name,
                f.params.len(),
                args.len()
            )));
        }
        let depth = CALL_DEPTH.with(|d| {
            d.set(d.get() + 1);
            d.get()
        });
        let result = if depth > MAX_CALL_DEPTH {
            Err(RuntimeError::Domain(format!("call depth exceeded {MAX_CALL_DEPTH} in '{}'", f.name)))
        } else {
            let mut env = vec![Value::Zero; f.var_count()];
            for (p, a) in f.params.iter().zip(args) {
                env[p.index()] = a;
            }
            self.region(f, &f.body, &mut env)
                .map(|()| f.body.yields.iter().map(|y| env[y.index()].clone()).collect())
        };
        CALL_DEPTH.with(|d| d.set(d.get() - 1));
        result
    }

    fn region(&mut self, f: &IrFunction, r: &Region, env: &mut [Value]) -> Result<()> {
        for instr in &r.instrs {
            self.instr(f, instr, env)?;
        }
        Ok(())
    }

    fn record(&mut self, c: Control) {
        if let Some(trace) = &mut self.trace {
            trace.push(c);
        }
    }

    fn cursor(&mut self) -> Result<&mut TapeCursor<'a>> {
        self.replay
            .as_mut()
            .ok_or_else(|| RuntimeError::Tape("no tape to replay".into()))
    }

    fn instr(&mut self, f: &IrFunction, instr: &Instr, env: &mut [Value]) -> Result<()> {
        let get = |env: &[Value], v: crate::ir::VarId| env[v.index()].clone();
        match instr {
            Instr::Const { dst, value } => {
                env[dst.index()] = match value {
                    Literal::Real(v) => Value::Real(*v),
                    Literal::Int(v) => Value::Int(*v),
                    Literal::Bool(v) => Value::Bool(*v),
                    Literal::Zero => Value::Zero,
                };
            }
            Instr::Prim { dst, op, args } => {
                let vals: Vec<Value> = args.iter().map(|a| get(env, *a)).collect();
                env[dst.index()] = algebra::apply(*op, &vals)?;
            }
            Instr::Call { dst, callee, args } => {
                let vals: Vec<Value> = args.iter().map(|a| get(env, *a)).collect();
                let mut out = self.call(callee, vals)?;
                env[dst.index()] = out.pop().ok_or_else(|| {
                    RuntimeError::Arity(format!("'{callee}' returned no value"))
                })?;
            }
            Instr::If {
                cond,
                then,
                els,
                dsts,
            } => {
                let taken = as_bool(&env[cond.index()], "if condition")?;
                self.record(Control::Branch(taken));
                let r = if taken { then } else { els };
                self.region(f, r, env)?;
                for (d, y) in dsts.iter().zip(&r.yields) {
                    env[d.index()] = get(env, *y);
                }
            }
            Instr::While {
                carried,
                inits,
                cond,
                body,
                dsts,
            } => {
                for (c, i) in carried.iter().zip(inits) {
                    env[c.index()] = get(env, *i);
                }
                let mut trips = 0u64;
                loop {
                    self.region(f, cond, env)?;
                    if !as_bool(&env[cond.yields[0].index()], "loop condition")? {
                        break;
                    }
                    self.region(f, body, env)?;
                    let next: Vec<Value> = body.yields.iter().map(|y| get(env, *y)).collect();
                    for (c, v) in carried.iter().zip(next) {
                        env[c.index()] = v;
                    }
                    trips += 1;
                }
                for (d, c) in dsts.iter().zip(carried) {
                    env[d.index()] = get(env, *c);
                }
                self.record(Control::Trips(trips));
            }
            Instr::Print { parts } => {
                let mut line = String::new();
                for p in parts {
                    match p {
                        PrintPart::Text(t) => line.push_str(t),
                        PrintPart::Var(v) => line.push_str(&env[v.index()].to_string()),
                    }
                }
                self.sink.write_line(&line);
            }
            Instr::Partial { dst, callee, args } => {
                let dispatch = self.dispatch.ok_or_else(|| {
                    RuntimeError::Transform("'partial' evaluated outside of a differentiated execution".into())
                })?;
                let vals: Vec<Value> = args.iter().map(|a| get(env, *a)).collect();
                let (value, pb) = dispatch.dispatch(callee, &vals)?;
                self.tape.push_pullback(pb);
                env[dst.index()] = value;
            }
            Instr::PushBranch { cond } => {
                let b = as_bool(&env[cond.index()], "branch record")?;
                self.tape.push_control(Control::Branch(b));
            }
            Instr::PushTrips { count } => match env[count.index()] {
                Value::Int(n) if n >= 0 => self.tape.push_control(Control::Trips(n as u64)),
                ref other => return Err(RuntimeError::Kind(format!("trip count must be a non-negative int, got {other}"))),
            },
            Instr::PopBranch { dst } => {
                let b = self.cursor()?.pop_branch()?;
                env[dst.index()] = Value::Bool(b);
            }
            Instr::PopTrips { dst } => {
                let n = self.cursor()?.pop_trips()?;
                env[dst.index()] = Value::Int(n as i64);
            }
            Instr::Back { z, dsts } => {
                let pb = self.cursor()?.pop_pullback()?;
                let z = &env[z.index()];
                let cots = if z.is_zero() {
                    vec![Value::Zero; dsts.len()]
                } else {
                    apply_pullback(pb, z, &mut self.invocations)?
                };
                if cots.len() != dsts.len() {
                    return Err(RuntimeError::Arity(format!(
                        "pullback returned {} cotangents, expected {}",
                        cots.len(),
                        dsts.len()
                    )));
                }
                for (d, c) in dsts.iter().zip(cots) {
                    env[d.index()] = c;
                }
            }
        }
        Ok(())
    }
}

fn as_bool(v: &Value, what: &str) -> Result<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        other => Err(RuntimeError::Kind(format!("{what} must be bool, got {}", other.kind()))),
    }
}

/// Apply a recorded pullback to cotangent `z`, counting rule invocations.
pub fn apply_pullback(pb: &Pullback, z: &Value, invocations: &mut usize) -> Result<Vec<Value>> {
    match pb {
        Pullback::Rule(f) => {
            *invocations += 1;
            f(z)
        }
        Pullback::Transformed { function, tape } => {
            let module = IrModule::default();
            let mut m = Machine::new(&module, &NullSink).replaying(tape);
            let out = m.call_function(function, vec![z.clone()])?;
            if !m.replay_exhausted() {
                return Err(RuntimeError::Tape(format!(
                    "pullback '{}' left tape entries unread",
                    function.name
                )));
            }
            *invocations += m.invocations;
            Ok(out)
        }
    }
}

/// Run `name` in `module` and return its single result.
pub fn interpret(module: &IrModule, name: &str, args: Vec<Value>, sink: &dyn PrintSink) -> Result<Value> {
    let mut out = Machine::new(module, sink).call(name, args)?;
    out.pop()
        .ok_or_else(|| RuntimeError::Arity(format!("'{name}' returned no value")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;
    use crate::ir::lower;

    fn module(src: &str) -> IrModule {
        lower(&parse_source(src).unwrap()).unwrap()
    }

    #[test]
    fn polynomial_at_one_third() {
        let m = module("fn f(x) { return x^2.0 + 3.0*x + 1.0; }");
        let v = interpret(&m, "f", vec![Value::Real(1.0 / 3.0)], &NullSink).unwrap();
        let Value::Real(y) = v else { panic!() };
        assert!((y - 19.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn early_return_from_loop() {
        let m = module(
            "fn f(n: int) -> int { let i = 0; while true { if i * i >= n { return i; } i += 1; } return -1; }",
        );
        let v = interpret(&m, "f", vec![Value::Int(10)], &NullSink).unwrap();
        assert_eq!(v, Value::Int(4));
    }

    #[test]
    fn prints_go_to_sink_and_trace_records_control() {
        let m = module(
            "fn f(x) { for i in 1:3 { if isodd(i) { println(\"i=\", i); } } return x; }",
        );
        let sink = BufferSink::new();
        let mut machine = Machine::new(&m, &sink).tracing();
        machine.call("f", vec![Value::Real(0.0)]).unwrap();
        assert_eq!(sink.lines(), vec!["i=1", "i=3"]);
        let trips: Vec<&Control> = machine.trace().iter().filter(|c| matches!(c, Control::Trips(_))).collect();
        assert_eq!(trips, vec![&Control::Trips(3)]);
    }

    #[test]
    fn recursion_through_calls() {
        let m = module(
            "fn fact(n: int) -> int { if n <= 1 { return 1; } return n * fact(n - 1); }",
        );
        assert_eq!(interpret(&m, "fact", vec![Value::Int(10)], &NullSink).unwrap(), Value::Int(3628800));
    }

    #[test]
    fn runaway_recursion_is_an_error() {
        let m = module("fn f(x) { return f(x); }");
        assert!(matches!(
            interpret(&m, "f", vec![Value::Real(1.0)], &NullSink),
            Err(RuntimeError::Domain(_))
        ));
    }
}
