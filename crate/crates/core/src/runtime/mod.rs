//! Values, primitive arithmetic, the adjoint-rule registry and the IR
//! interpreter.

pub mod algebra;
mod interp;
mod registry;
mod tape;
mod value;

use thiserror::Error;

pub use interp::{apply_pullback, interpret, BufferSink, Machine, NullSink, PartialDispatch, PrintSink, StdoutSink};
pub use registry::{
    canonical_name, value_kind, AdjointRule, PrimalFn, PullbackBuilder, PullbackFn, RuleKey, RuleRegistry,
};
pub use tape::{Control, Pullback, Tape, TapeCursor};
pub use value::{format_real, fresh_tag, Dual, Term, Uncertain, Value, ValueKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("kind error: {0}")]
    Kind(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("arity error: {0}")]
    Arity(String),
    #[error("unknown primitive '{0}'")]
    UnknownPrimitive(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("the rule registry is frozen")]
    FrozenRegistry,
    #[error("transform error: {0}")]
    Transform(String),
    #[error("function '{0}' does not return a real scalar")]
    NonScalarOutput(String),
    #[error("tape error: {0}")]
    Tape(String),
}
