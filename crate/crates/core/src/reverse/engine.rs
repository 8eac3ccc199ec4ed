use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use super::transform::{transform, AdjointPair};
use crate::ir::{Callee, IrFunction, IrModule, Kind, PrimOp};
use crate::runtime::{
    apply_pullback, canonical_name, Control, Machine, NullSink, PartialDispatch, PrintSink, Pullback, RuleKey,
    RuleRegistry, RuntimeError, StdoutSink, Tape, Value, ValueKind,
};

type Result<T> = std::result::Result<T, RuntimeError>;

/// Value of a differentiated application together with its pullback.
#[derive(Debug, Clone)]
pub struct AugmentedResult {
    pub value: Value,
    pub pullback: Pullback,
}

impl AugmentedResult {
    /// Map output cotangent `z` to one cotangent per argument.
    pub fn pull(&self, z: &Value) -> Result<Vec<Value>> {
        self.pull_counted(z).map(|(c, _)| c)
    }

    /// Like [`pull`](Self::pull), also returning the number of adjoint-rule
    /// invocations performed.
    pub fn pull_counted(&self, z: &Value) -> Result<(Vec<Value>, usize)> {
        let mut n = 0;
        let cots = apply_pullback(&self.pullback, z, &mut n)?;
        Ok((cots, n))
    }

    /// The tape recorded by the augmented primal, for user functions.
    pub fn tape(&self) -> Option<&Tape> {
        match &self.pullback {
            Pullback::Transformed { tape, .. } => Some(tape),
            Pullback::Rule(_) => None,
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// A compiled module, a frozen rule registry and the cache of generated
/// adjoints. All differentiation entry points live here.
pub struct Engine {
    module: IrModule,
    registry: RuleRegistry,
    cache: Mutex<HashMap<RuleKey, Arc<AdjointPair>>>,
    transforms: Mutex<HashMap<RuleKey, usize>>,
    sink: Arc<dyn PrintSink>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("functions", &self.module.functions().len())
            .field("registry", &self.registry)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Take ownership of `module` and `registry`; the registry is frozen.
    pub fn new(module: IrModule, mut registry: RuleRegistry) -> Engine {
        registry.freeze();
        Engine {
            module,
            registry,
            cache: Mutex::new(HashMap::new()),
            transforms: Mutex::new(HashMap::new()),
            sink: Arc::new(StdoutSink),
        }
    }

    /// Engine over `module` with the builtin rules.
    pub fn with_builtins(module: IrModule) -> Engine {
        Engine::new(module, RuleRegistry::with_builtins())
    }

    /// Compile `source` and build an engine with the builtin rules.
    pub fn from_source(source: &str) -> std::result::Result<Engine, crate::Error> {
        Ok(Engine::with_builtins(crate::compile(source)?))
    }

    /// Send `println` output to `sink` instead of standard output.
    pub fn with_sink(mut self, sink: Arc<dyn PrintSink>) -> Engine {
        self.sink = sink;
        self
    }

    pub fn module(&self) -> &IrModule {
        &self.module
    }

    pub fn registry(&self) -> &RuleRegistry {
        &self.registry
    }

    pub fn function(&self, name: &str) -> Result<&IrFunction> {
        self.module
            .get(name)
            .ok_or_else(|| RuntimeError::UnknownFunction(name.to_string()))
    }

    /// Check arity and kinds of top-level arguments, promoting ints passed
    /// for real parameters.
    pub fn prepare_args(&self, name: &str, args: &[Value]) -> Result<Vec<Value>> {
        let f = self.function(name)?;
        if args.len() != f.params.len() {
            return Err(RuntimeError::Arity(format!(
                "'{name}' takes {} argument(s), got {}",
                f.params.len(),
                args.len()
            )));
        }
        f.param_kinds()
            .into_iter()
            .zip(args)
            .enumerate()
            .map(|(i, (k, a))| match (k, a) {
                (Kind::Real, Value::Int(n)) => Ok(Value::Real(*n as f64)),
                _ if a.base_kind() == crate::runtime::value_kind(k) => Ok(a.clone()),
                _ => Err(RuntimeError::Kind(format!(
                    "argument {} of '{name}' must be {k}, got {}",
                    i + 1,
                    a.kind()
                ))),
            })
            .collect()
    }

    /// Evaluate `name` at `args`.
    pub fn run(&self, name: &str, args: &[Value]) -> Result<Value> {
        let args = self.prepare_args(name, args)?;
        let mut out = Machine::new(&self.module, &*self.sink).call(name, args)?;
        Ok(out.pop().unwrap_or(Value::Zero))
    }

    /// Evaluate without printing, returning the control decisions taken.
    pub fn run_traced(&self, name: &str, args: &[Value]) -> Result<(Value, Vec<Control>)> {
        let args = self.prepare_args(name, args)?;
        let mut m = Machine::new(&self.module, &NullSink).tracing();
        let mut out = m.call(name, args)?;
        Ok((out.pop().unwrap_or(Value::Zero), m.trace().to_vec()))
    }

    /// The generated adjoint of `name` for arguments of `kinds`, created on
    /// first use and cached for the lifetime of the engine.
    pub fn adjoint(&self, name: &str, kinds: &[ValueKind]) -> Result<Arc<AdjointPair>> {
        let key = (name.to_string(), kinds.to_vec());
        let mut cache = lock(&self.cache);
        if let Some(p) = cache.get(&key) {
            return Ok(p.clone());
        }
        let f = self.function(name)?;
        let pair = Arc::new(transform(f).map_err(|e| RuntimeError::Transform(e.to_string()))?);
        *lock(&self.transforms).entry(key.clone()).or_default() += 1;
        cache.insert(key, pair.clone());
        Ok(pair)
    }

    /// How many times the adjoint of `name` for `kinds` has been generated.
    pub fn transform_count(&self, name: &str, kinds: &[ValueKind]) -> usize {
        lock(&self.transforms)
            .get(&(name.to_string(), kinds.to_vec()))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_transforms(&self) -> usize {
        lock(&self.transforms).values().sum()
    }

    /// The differentiation operator: apply `callee` to `args` and return its
    /// pullback. A registered rule wins; otherwise a user function falls back
    /// to its generated adjoint.
    pub fn dispatch_partial(&self, callee: &Callee, args: &[Value]) -> Result<(Value, Pullback)> {
        let name = callee.name();
        if let Some(rule) = self.registry.resolve(name, args) {
            let (v, pb) = rule.apply(args)?;
            return Ok((v, Pullback::Rule(pb)));
        }
        match callee {
            Callee::Func(name) if self.module.get(name).is_some() => {
                let kinds: Vec<ValueKind> = args.iter().map(Value::kind).collect();
                let pair = self.adjoint(name, &kinds)?;
                let mut m = Machine::new(&self.module, &*self.sink).with_dispatch(self);
                let mut out = m.call_function(&pair.primal, args.to_vec())?;
                let value = out.pop().unwrap_or(Value::Zero);
                Ok((
                    value,
                    Pullback::Transformed {
                        function: pair.pullback.clone(),
                        tape: Arc::new(m.into_tape()),
                    },
                ))
            }
            _ => Err(RuntimeError::UnknownPrimitive(name.to_string())),
        }
    }

    fn callee(&self, name: &str) -> Callee {
        if self.module.get(name).is_some() {
            return Callee::Func(name.to_string());
        }
        match PrimOp::from_name(canonical_name(name)) {
            Some(op) => Callee::Prim(op),
            None => Callee::Func(name.to_string()),
        }
    }

    /// Value and pullback of `name` at `args`.
    pub fn vjp(&self, name: &str, args: &[Value]) -> Result<AugmentedResult> {
        let callee = self.callee(name);
        let args = match callee {
            Callee::Func(_) => self.prepare_args(name, args)?,
            Callee::Prim(_) => args.to_vec(),
        };
        let (value, pullback) = self.dispatch_partial(&callee, &args)?;
        Ok(AugmentedResult { value, pullback })
    }

    /// Gradient of a scalar-valued function: its pullback applied to 1.
    /// Real and vector arguments get concrete cotangents; integer arguments
    /// get the zero marker.
    pub fn gradient(&self, name: &str, args: &[Value]) -> Result<Vec<Value>> {
        if let Some(f) = self.module.get(name) {
            if f.result_kinds() == [Kind::Vec] {
                return Err(RuntimeError::NonScalarOutput(name.to_string()));
            }
        }
        let aug = self.vjp(name, args)?;
        if aug.value.base_kind() != ValueKind::Real {
            return Err(RuntimeError::NonScalarOutput(name.to_string()));
        }
        let cots = aug.pull(&Value::Real(1.0))?;
        Ok(cots
            .into_iter()
            .zip(args)
            .map(|(c, a)| match a.base_kind() {
                ValueKind::Real | ValueKind::Vec => c.materialize(a),
                _ => c,
            })
            .collect())
    }
}

impl PartialDispatch for Engine {
    fn dispatch(&self, callee: &Callee, args: &[Value]) -> Result<(Value, Pullback)> {
        self.dispatch_partial(callee, args)
    }
}
