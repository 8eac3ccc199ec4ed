//! Lexing, parsing and desugaring of `.dp` source files.

pub mod ast;
mod desugar;
mod lexer;
mod parser;
mod pretty;
pub mod token;

pub use ast::Program;
pub use desugar::{desugar, RESERVED_PREFIX};
pub use lexer::tokenize;
pub use parser::parse;
pub use pretty::{expr_str, pretty_print};
pub use token::{Span, Token, TokenKind};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error("lex error at {span}: {message}")]
    Lex { span: Span, message: String },
    #[error("parse error at {span}: expected {}, found {found}", expected.join(" or "))]
    Parse {
        span: Span,
        expected: Vec<String>,
        found: String,
    },
    #[error("desugar error: {message}")]
    Desugar { message: String },
}

impl FrontendError {
    pub fn span(&self) -> Option<Span> {
        match self {
            FrontendError::Lex { span, .. } | FrontendError::Parse { span, .. } => Some(*span),
            FrontendError::Desugar { .. } => None,
        }
    }
}

/// Tokenize, parse and desugar in one step.
pub fn parse_source(source: &str) -> Result<Program, FrontendError> {
    let tokens = tokenize(source)?;
    let ast = parse(&tokens)?;
    desugar(&ast)
}
