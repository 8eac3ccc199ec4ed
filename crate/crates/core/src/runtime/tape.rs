use std::fmt;
use std::sync::Arc;

use super::registry::PullbackFn;
use super::RuntimeError;
use crate::ir::IrFunction;

/// A recorded control decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Branch(bool),
    Trips(u64),
}

/// A deferred backward step recorded by the augmented primal.
#[derive(Clone)]
pub enum Pullback {
    /// Closure built by an adjoint rule.
    Rule(PullbackFn),
    /// Generated pullback code of a user function together with the tape its
    /// augmented primal recorded.
    Transformed {
        function: Arc<IrFunction>,
        tape: Arc<Tape>,
    },
}

impl fmt::Debug for Pullback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pullback::Rule(_) => f.write_str("Rule(..)"),
            Pullback::Transformed { function, tape } => f
                .debug_struct("Transformed")
                .field("function", &function.name)
                .field("tape", tape)
                .finish(),
        }
    }
}

/// Everything the pullback of one execution needs: the pullbacks of tracked
/// applications in execution order, and the branch and loop-trip record.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pullbacks: Vec<Pullback>,
    control: Vec<Control>,
}

impl Tape {
    pub fn push_pullback(&mut self, pb: Pullback) {
        self.pullbacks.push(pb);
    }

    pub fn push_control(&mut self, c: Control) {
        self.control.push(c);
    }

    pub fn pullbacks(&self) -> &[Pullback] {
        &self.pullbacks
    }

    pub fn control(&self) -> &[Control] {
        &self.control
    }

    /// Trip counts of the loops executed at this level, in completion order.
    pub fn trip_counts(&self) -> Vec<u64> {
        self.control
            .iter()
            .filter_map(|c| match c {
                Control::Trips(n) => Some(*n),
                Control::Branch(_) => None,
            })
            .collect()
    }

    pub fn cursor(&self) -> TapeCursor<'_> {
        TapeCursor {
            tape: self,
            pullbacks: self.pullbacks.len(),
            control: self.control.len(),
        }
    }
}

/// Reads a tape back to front without consuming it, so a pullback can be
/// applied any number of times.
#[derive(Debug, Clone)]
pub struct TapeCursor<'t> {
    tape: &'t Tape,
    pullbacks: usize,
    control: usize,
}

impl<'t> TapeCursor<'t> {
    pub fn pop_pullback(&mut self) -> Result<&'t Pullback, RuntimeError> {
        if self.pullbacks == 0 {
            return Err(RuntimeError::Tape("pullback stack exhausted".into()));
        }
        self.pullbacks -= 1;
        Ok(&self.tape.pullbacks[self.pullbacks])
    }

    fn pop_control(&mut self) -> Result<Control, RuntimeError> {
        if self.control == 0 {
            return Err(RuntimeError::Tape("control stack exhausted".into()));
        }
        self.control -= 1;
        Ok(self.tape.control[self.control])
    }

    pub fn pop_branch(&mut self) -> Result<bool, RuntimeError> {
        match self.pop_control()? {
            Control::Branch(b) => Ok(b),
            other => Err(RuntimeError::Tape(format!("expected a branch record, found {other:?}"))),
        }
    }

    pub fn pop_trips(&mut self) -> Result<u64, RuntimeError> {
        match self.pop_control()? {
            Control::Trips(n) => Ok(n),
            other => Err(RuntimeError::Tape(format!("expected a trip count, found {other:?}"))),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.pullbacks == 0 && self.control == 0
    }
}
