//! Structured single-assignment IR.
//!
//! Control flow is expressed only through nested [`Region`]s owned by `If`
//! and `While` instructions; there are no jumps and no φ nodes. Values leave
//! a region through its `yields`, which bind the destination variables of the
//! owning instruction. The function body's yields are the function results.

mod lower;
mod text;
mod validate;

use std::collections::HashMap;
use std::fmt;

pub use lower::{lower, LowerError};
pub use text::{parse_ir, print_function, print_ir, IrParseError, IR_HEADER};
pub use validate::{validate, Diagnostic};

/// Static kind of an IR variable. Uncertain and dual values are real-kinded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Real,
    Int,
    Bool,
    Vec,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Real => "real",
            Kind::Int => "int",
            Kind::Bool => "bool",
            Kind::Vec => "vec",
        }
    }

    pub fn from_name(s: &str) -> Option<Kind> {
        Some(match s {
            "real" => Kind::Real,
            "int" => Kind::Int,
            "bool" => Kind::Bool,
            "vec" => Kind::Vec,
            _ => return None,
        })
    }

    /// Whether values of this kind carry a nonzero cotangent.
    pub fn is_differentiable(self) -> bool {
        matches!(self, Kind::Real | Kind::Vec)
    }

    fn is_scalar(self) -> bool {
        matches!(self, Kind::Real | Kind::Int)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Literal {
    Real(f64),
    Int(i64),
    Bool(bool),
    /// Additive-identity cotangent marker.
    Zero,
}

macro_rules! prim_ops {
    ($($variant:ident => $name:literal / $arity:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum PrimOp { $($variant),* }

        impl PrimOp {
            pub const ALL: &'static [PrimOp] = &[$(PrimOp::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(PrimOp::$variant => $name),* }
            }

            pub fn from_name(s: &str) -> Option<PrimOp> {
                match s { $($name => Some(PrimOp::$variant),)* _ => None }
            }

            pub fn arity(self) -> usize {
                match self { $(PrimOp::$variant => $arity),* }
            }
        }
    };
}

prim_ops! {
    Add => "add" / 2,
    Sub => "sub" / 2,
    Mul => "mul" / 2,
    Div => "div" / 2,
    Pow => "pow" / 2,
    Neg => "neg" / 1,
    Abs => "abs" / 1,
    Eq => "eq" / 2,
    Ne => "ne" / 2,
    Lt => "lt" / 2,
    Le => "le" / 2,
    Gt => "gt" / 2,
    Ge => "ge" / 2,
    And => "and" / 2,
    Or => "or" / 2,
    Not => "not" / 1,
    IsOdd => "isodd" / 1,
    Factorial => "factorial" / 1,
    IDiv => "idiv" / 2,
    ToReal => "real" / 1,
    Sin => "sin" / 1,
    Cos => "cos" / 1,
    Exp => "exp" / 1,
    Log => "log" / 1,
    Sqrt => "sqrt" / 1,
    Tanh => "tanh" / 1,
    Sigmoid => "sigmoid" / 1,
    Dot => "dot" / 2,
    Axpy => "axpy" / 3,
    Sum => "sum" / 1,
    Get => "get" / 2,
    Len => "len" / 1,
}

impl PrimOp {
    /// Static result kind for the given operand kinds, or `None` if the
    /// combination is ill-kinded.
    pub fn result_kind(self, args: &[Kind]) -> Option<Kind> {
        use Kind::*;
        if args.len() != self.arity() {
            return None;
        }
        let both_int = args.iter().all(|k| *k == Int);
        let all_scalar = args.iter().all(|k| k.is_scalar());
        match self {
            PrimOp::Add | PrimOp::Sub => match (args[0], args[1]) {
                (Int, Int) => Some(Int),
                (Vec, Vec) => Some(Vec),
                _ if all_scalar => Some(Real),
                _ => None,
            },
            PrimOp::Mul => match (args[0], args[1]) {
                (Int, Int) => Some(Int),
                (Vec, k) | (k, Vec) if k.is_scalar() => Some(Vec),
                _ if all_scalar => Some(Real),
                _ => None,
            },
            PrimOp::Div => all_scalar.then_some(Real),
            PrimOp::Pow => {
                if both_int {
                    Some(Int)
                } else {
                    all_scalar.then_some(Real)
                }
            }
            PrimOp::Neg => match args[0] {
                Bool => None,
                k => Some(k),
            },
            PrimOp::Abs => all_scalar.then_some(args[0]),
            PrimOp::Eq | PrimOp::Ne => {
                (all_scalar || (args[0] == Bool && args[1] == Bool)).then_some(Bool)
            }
            PrimOp::Lt | PrimOp::Le | PrimOp::Gt | PrimOp::Ge => all_scalar.then_some(Bool),
            PrimOp::And | PrimOp::Or | PrimOp::Not => {
                args.iter().all(|k| *k == Bool).then_some(Bool)
            }
            PrimOp::IsOdd => both_int.then_some(Bool),
            PrimOp::Factorial | PrimOp::IDiv => both_int.then_some(Int),
            PrimOp::ToReal
            | PrimOp::Sin
            | PrimOp::Cos
            | PrimOp::Exp
            | PrimOp::Log
            | PrimOp::Sqrt
            | PrimOp::Tanh
            | PrimOp::Sigmoid => all_scalar.then_some(Real),
            PrimOp::Dot => (args[0] == Vec && args[1] == Vec).then_some(Real),
            PrimOp::Axpy => {
                (args[0].is_scalar() && args[1] == Vec && args[2] == Vec).then_some(Vec)
            }
            PrimOp::Sum => (args[0] == Vec).then_some(Real),
            PrimOp::Get => (args[0] == Vec && args[1] == Int).then_some(Real),
            PrimOp::Len => (args[0] == Vec).then_some(Int),
        }
    }
}

impl fmt::Display for PrimOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Target of a differentiated (`partial`) application.
#[derive(Debug, Clone, PartialEq)]
pub enum Callee {
    Prim(PrimOp),
    Func(String),
}

impl Callee {
    pub fn name(&self) -> &str {
        match self {
            Callee::Prim(op) => op.name(),
            Callee::Func(name) => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrintPart {
    Text(String),
    Var(VarId),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Region {
    pub instrs: Vec<Instr>,
    pub yields: Vec<VarId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    Const {
        dst: VarId,
        value: Literal,
    },
    Prim {
        dst: VarId,
        op: PrimOp,
        args: Vec<VarId>,
    },
    Call {
        dst: VarId,
        callee: String,
        args: Vec<VarId>,
    },
    If {
        cond: VarId,
        then: Region,
        els: Region,
        dsts: Vec<VarId>,
    },
    /// `carried` are the loop's block parameters, bound to `inits` on entry
    /// and to the body's yields after each iteration. `cond` yields one bool.
    While {
        carried: Vec<VarId>,
        inits: Vec<VarId>,
        cond: Region,
        body: Region,
        dsts: Vec<VarId>,
    },
    Print {
        parts: Vec<PrintPart>,
    },
    // The instructions below only appear in generated adjoint code.
    /// Apply `callee` through the rule registry and push its pullback.
    Partial {
        dst: VarId,
        callee: Callee,
        args: Vec<VarId>,
    },
    PushBranch {
        cond: VarId,
    },
    PushTrips {
        count: VarId,
    },
    PopBranch {
        dst: VarId,
    },
    PopTrips {
        dst: VarId,
    },
    /// Pop the most recent pullback and apply it to cotangent `z`.
    Back {
        z: VarId,
        dsts: Vec<VarId>,
    },
}

impl Instr {
    /// Variables defined directly by this instruction (not inside nested regions).
    pub fn defs(&self) -> Vec<VarId> {
        match self {
            Instr::Const { dst, .. }
            | Instr::Prim { dst, .. }
            | Instr::Call { dst, .. }
            | Instr::Partial { dst, .. }
            | Instr::PopBranch { dst }
            | Instr::PopTrips { dst } => vec![*dst],
            Instr::If { dsts, .. } | Instr::Back { dsts, .. } => dsts.clone(),
            Instr::While { dsts, .. } => dsts.clone(),
            Instr::Print { .. } | Instr::PushBranch { .. } | Instr::PushTrips { .. } => vec![],
        }
    }

    /// Whether this instruction only appears in generated adjoint code.
    pub fn is_adjoint_only(&self) -> bool {
        matches!(
            self,
            Instr::Partial { .. }
                | Instr::PushBranch { .. }
                | Instr::PushTrips { .. }
                | Instr::PopBranch { .. }
                | Instr::PopTrips { .. }
                | Instr::Back { .. }
        )
    }

    pub fn regions(&self) -> Vec<&Region> {
        match self {
            Instr::If { then, els, .. } => vec![then, els],
            Instr::While { cond, body, .. } => vec![cond, body],
            _ => vec![],
        }
    }
}

impl Region {
    /// Total instruction count including nested regions.
    pub fn instruction_count(&self) -> usize {
        self.instrs
            .iter()
            .map(|i| 1 + i.regions().iter().map(|r| r.instruction_count()).sum::<usize>())
            .sum()
    }

    pub fn any_instr(&self, pred: &dyn Fn(&Instr) -> bool) -> bool {
        self.instrs
            .iter()
            .any(|i| pred(i) || i.regions().iter().any(|r| r.any_instr(pred)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrFunction {
    pub name: String,
    pub params: Vec<VarId>,
    /// The body's yields are the function's results.
    pub body: Region,
    /// Kind of every variable, indexed by `VarId`.
    pub kinds: Vec<Kind>,
}

impl IrFunction {
    pub fn kind(&self, v: VarId) -> Kind {
        self.kinds[v.index()]
    }

    pub fn param_kinds(&self) -> Vec<Kind> {
        self.params.iter().map(|p| self.kind(*p)).collect()
    }

    pub fn results(&self) -> &[VarId] {
        &self.body.yields
    }

    pub fn result_kinds(&self) -> Vec<Kind> {
        self.results().iter().map(|r| self.kind(*r)).collect()
    }

    pub fn var_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn instruction_count(&self) -> usize {
        self.body.instruction_count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct IrModule {
    functions: Vec<IrFunction>,
    index: HashMap<String, usize>,
}

impl PartialEq for IrModule {
    fn eq(&self, other: &Self) -> bool {
        self.functions == other.functions
    }
}

impl IrModule {
    pub fn new(functions: Vec<IrFunction>) -> Self {
        let index = functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), i))
            .collect();
        IrModule { functions, index }
    }

    pub fn functions(&self) -> &[IrFunction] {
        &self.functions
    }

    pub fn get(&self, name: &str) -> Option<&IrFunction> {
        self.index.get(name).map(|i| &self.functions[*i])
    }

    pub fn push(&mut self, f: IrFunction) {
        self.index.insert(f.name.clone(), self.functions.len());
        self.functions.push(f);
    }
}
