//! Reverse mode: the adjoint transform and the engine that drives it.

mod engine;
mod transform;

pub use engine::{AugmentedResult, Engine};
pub use transform::{is_tracked, transform, AdjointPair, TransformError};

use crate::ir::IrModule;

/// The module's functions followed by the augmented primal and pullback of
/// every function with a differentiable result. With `only`, adjoints are
/// generated for that function alone.
pub fn adjoint_module(module: &IrModule, only: Option<&str>) -> Result<IrModule, TransformError> {
    let mut out = module.clone();
    for f in module.functions() {
        if only.is_some_and(|n| n != f.name) {
            continue;
        }
        if !f.result_kinds().iter().all(|k| k.is_differentiable()) {
            continue;
        }
        let pair = transform(f)?;
        out.push((*pair.primal).clone());
        out.push((*pair.pullback).clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_ir, print_ir, validate};

    #[test]
    fn adjoint_module_round_trips_through_text() {
        let m = crate::compile(
            "fn sq(x) { return x * x; }\nfn odd(n: int) -> bool { return isodd(n); }\nfn g(x) { return sq(x) + 1.0; }",
        )
        .unwrap();
        let adj = adjoint_module(&m, None).unwrap();
        let names: Vec<&str> = adj.functions().iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["sq", "odd", "g", "sq.primal", "sq.pullback", "g.primal", "g.pullback"]);
        assert!(validate(&adj).is_empty());
        let text = print_ir(&adj);
        assert_eq!(print_ir(&parse_ir(&text).unwrap()), text);
        let one = adjoint_module(&m, Some("g")).unwrap();
        assert_eq!(one.functions().len(), 5);
    }
}
