//! A small numerical language with source-to-source reverse-mode
//! differentiation, forward mode, gradient checking and an overhead
//! benchmark.

pub mod bench;
pub mod corpus;
pub mod forward;
pub mod frontend;
pub mod gradcheck;
pub mod ir;
pub mod reverse;
pub mod runtime;

use thiserror::Error;

pub use frontend::FrontendError;
pub use ir::{Diagnostic, IrModule, IrParseError, LowerError};
pub use reverse::{adjoint_module, AdjointPair, AugmentedResult, Engine, TransformError};
pub use runtime::{RuleRegistry, RuntimeError, Value};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("invalid IR: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    IrParse(#[from] IrParseError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Parse, desugar, lower and validate a source program.
pub fn compile(source: &str) -> Result<IrModule, Error> {
    let ast = frontend::parse_source(source)?;
    let module = ir::lower(&ast)?;
    let diags = ir::validate(&module);
    if diags.is_empty() {
        Ok(module)
    } else {
        Err(Error::Invalid(diags))
    }
}
