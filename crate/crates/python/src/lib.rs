//! Python bindings for the differentiating compiler.
//!
//! ```python
//! import diffprog
//! e = diffprog.Engine("fn f(x) { return x * x * x; }")
//! e.gradient("f", 2.0)        # [12.0]
//! e.gradient("f", diffprog.Uncertain(2.0, 0.1))
//! ```

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyFloat, PyInt, PyList, PyTuple};
use pyo3::IntoPyObjectExt;

use diffprog_core::corpus::{self, Mode};
use diffprog_core::gradcheck::{self, DEFAULT_ATOL, DEFAULT_RTOL, DEFAULT_SEED, SUITE_POINTS};
use diffprog_core::ir::print_ir;
use diffprog_core::runtime::{BufferSink, NullSink, PrintSink, StdoutSink};
use diffprog_core::{adjoint_module, Engine, Value};

/// A real number with first-order error propagation. Values derived from
/// the same `Uncertain` stay correlated, so `x - x` has zero sigma.
#[pyclass(name = "Uncertain", module = "diffprog", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyUncertain {
    inner: diffprog_core::runtime::Uncertain,
}

#[pymethods]
impl PyUncertain {
    #[new]
    fn new(mean: f64, sigma: f64) -> PyResult<Self> {
        if !(sigma >= 0.0) {
            return Err(PyValueError::new_err(format!("sigma must be non-negative, got {sigma}")));
        }
        Ok(PyUncertain { inner: diffprog_core::runtime::Uncertain::new(mean, sigma) })
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    fn __repr__(&self) -> String {
        format!("Uncertain({:?} +- {:?})", self.inner.mean, self.inner.sigma())
    }
}

fn core_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_instance_of::<PyBool>() {
        Ok(Value::Bool(obj.extract()?))
    } else if obj.is_instance_of::<PyInt>() {
        Ok(Value::Int(obj.extract()?))
    } else if obj.is_instance_of::<PyFloat>() {
        Ok(Value::Real(obj.extract()?))
    } else if let Ok(u) = obj.extract::<PyRef<'_, PyUncertain>>() {
        Ok(Value::Uncertain(u.inner.clone()))
    } else if let Ok(v) = obj.extract::<Vec<f64>>() {
        Ok(Value::Vec(v))
    } else {
        Err(PyTypeError::new_err(format!(
            "cannot pass {} to a compiled function",
            obj.get_type().name()?
        )))
    }
}

fn to_values(args: &Bound<'_, PyTuple>) -> PyResult<Vec<Value>> {
    args.iter().map(|a| to_value(&a)).collect()
}

fn from_value(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    match v {
        Value::Real(x) => x.into_py_any(py),
        Value::Int(i) => i.into_py_any(py),
        Value::Bool(b) => b.into_py_any(py),
        Value::Vec(xs) => xs.clone().into_py_any(py),
        Value::Uncertain(u) => PyUncertain { inner: u.clone() }.into_py_any(py),
        Value::Zero => 0.0.into_py_any(py),
        Value::Dual(_) => Err(PyRuntimeError::new_err("a dual number escaped its derivative")),
    }
}

fn from_values(py: Python<'_>, vs: &[Value]) -> PyResult<Py<PyAny>> {
    let items = vs.iter().map(|v| from_value(py, v)).collect::<PyResult<Vec<_>>>()?;
    Ok(PyList::new(py, items)?.into_any().unbind())
}

fn json_to_py(py: Python<'_>, doc: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(doc).map_err(core_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A compiled program and its cache of generated adjoints.
///
/// `prints` selects where `println` output goes: "stdout" (default),
/// "capture" (read it back with `printed()`), or "discard".
#[pyclass(name = "Engine", module = "diffprog", frozen)]
struct PyEngine {
    engine: Engine,
    buffer: Option<Arc<BufferSink>>,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (source, prints = "stdout"))]
    fn new(source: &str, prints: &str) -> PyResult<Self> {
        let engine = Engine::from_source(source).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let mut buffer = None;
        let sink: Arc<dyn PrintSink> = match prints {
            "stdout" => Arc::new(StdoutSink),
            "discard" => Arc::new(NullSink),
            "capture" => {
                let b = Arc::new(BufferSink::new());
                buffer = Some(b.clone());
                b
            }
            other => return Err(PyValueError::new_err(format!("unknown prints mode '{other}'"))),
        };
        Ok(PyEngine { engine: engine.with_sink(sink), buffer })
    }

    /// Load a program from the built-in corpus by name.
    #[staticmethod]
    #[pyo3(signature = (name, prints = "discard"))]
    fn from_corpus(name: &str, prints: &str) -> PyResult<Self> {
        let entry = corpus::find(name).ok_or_else(|| PyValueError::new_err(format!("no corpus program '{name}'")))?;
        PyEngine::new(entry.source, prints)
    }

    /// Lines printed since the last call, when constructed with prints="capture".
    fn printed(&self) -> Vec<String> {
        match &self.buffer {
            Some(b) => {
                let lines = b.lines();
                b.clear();
                lines
            }
            None => Vec::new(),
        }
    }

    fn functions(&self) -> Vec<String> {
        self.engine.module().functions().iter().map(|f| f.name.clone()).collect()
    }

    #[pyo3(signature = (name, *args))]
    fn run(&self, py: Python<'_>, name: &str, args: &Bound<'_, PyTuple>) -> PyResult<Py<PyAny>> {
        let v = self.engine.run(name, &to_values(args)?).map_err(core_err)?;
        from_value(py, &v)
    }

    /// Reverse-mode gradient, one entry per argument.
    #[pyo3(signature = (name, *args))]
    fn gradient(&self, py: Python<'_>, name: &str, args: &Bound<'_, PyTuple>) -> PyResult<Py<PyAny>> {
        let g = self.engine.gradient(name, &to_values(args)?).map_err(core_err)?;
        from_values(py, &g)
    }

    #[pyo3(signature = (name, *args))]
    fn forward_gradient(&self, py: Python<'_>, name: &str, args: &Bound<'_, PyTuple>) -> PyResult<Py<PyAny>> {
        let g = self.engine.forward_gradient(name, &to_values(args)?).map_err(core_err)?;
        from_values(py, &g)
    }

    fn derivative(&self, py: Python<'_>, name: &str, x: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let d = self.engine.derivative(name, &to_value(x)?).map_err(core_err)?;
        from_value(py, &d)
    }

    fn second_derivative(&self, py: Python<'_>, name: &str, x: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let d = self.engine.second_derivative(name, &to_value(x)?).map_err(core_err)?;
        from_value(py, &d)
    }

    /// Gradient with respect to `params` with the trailing `noise` vector
    /// held fixed.
    fn mixed_gradient(&self, py: Python<'_>, name: &str, params: Vec<f64>, noise: Vec<f64>) -> PyResult<Py<PyAny>> {
        let params: Vec<Value> = params.into_iter().map(Value::Real).collect();
        let g = self.engine.mixed_gradient(name, &params, &noise).map_err(core_err)?;
        from_values(py, &g)
    }

    /// Number of adjoints generated so far.
    fn transform_count(&self) -> usize {
        self.engine.total_transforms()
    }

    /// Textual IR of the module; with `adjoint`, followed by the generated
    /// primal/pullback pairs.
    #[pyo3(signature = (adjoint = false, function = None))]
    fn emit_ir(&self, adjoint: bool, function: Option<&str>) -> PyResult<String> {
        if !adjoint {
            return Ok(print_ir(self.engine.module()));
        }
        let m = adjoint_module(self.engine.module(), function).map_err(core_err)?;
        Ok(print_ir(&m))
    }

    /// Compare the analytic gradient at `args` against central differences.
    #[pyo3(signature = (name, args, mode = "reverse", rtol = DEFAULT_RTOL, atol = DEFAULT_ATOL))]
    fn check(
        &self,
        py: Python<'_>,
        name: &str,
        args: &Bound<'_, PyList>,
        mode: &str,
        rtol: f64,
        atol: f64,
    ) -> PyResult<Py<PyAny>> {
        let mode: Mode = mode.parse().map_err(|e: String| PyValueError::new_err(e))?;
        let args = args.iter().map(|a| to_value(&a)).collect::<PyResult<Vec<_>>>()?;
        let report = gradcheck::check(&self.engine, name, &args, mode, rtol, atol);
        json_to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Engine(functions={:?})", self.functions())
    }
}

/// Names of the programs in the built-in corpus.
#[pyfunction]
fn corpus_names() -> Vec<&'static str> {
    corpus::entries().iter().map(|e| e.name).collect()
}

#[pyfunction]
fn corpus_source(name: &str) -> PyResult<&'static str> {
    corpus::find(name)
        .map(|e| e.source)
        .ok_or_else(|| PyValueError::new_err(format!("no corpus program '{name}'")))
}

/// Gradient-check every corpus program at seeded random points.
#[pyfunction]
#[pyo3(signature = (seed = DEFAULT_SEED, points = SUITE_POINTS))]
fn check_corpus(py: Python<'_>, seed: u64, points: usize) -> PyResult<Py<PyAny>> {
    let summary = py.detach(|| gradcheck::run_suite(&corpus::entries(), seed, points));
    json_to_py(py, &summary)
}

#[pymodule]
fn diffprog(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_class::<PyUncertain>()?;
    m.add_function(wrap_pyfunction!(corpus_names, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_source, m)?)?;
    m.add_function(wrap_pyfunction!(check_corpus, m)?)?;
    Ok(())
}
