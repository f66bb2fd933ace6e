//! Temporal-logic task specifications: parsing, template synthesis of the
//! mode automaton, finite-trace checking and transition mining.

pub mod check;
pub mod formula;
pub mod parser;
pub mod spec;
pub mod synth;

use thiserror::Error;

pub use check::{check_trace, check_mode_trace, TraceVerdict};
pub use formula::Formula;
pub use parser::{parse_formula, parse_formula_at};
pub use spec::{flatten_always, Gr1Spec};
pub use synth::{extend_with_transition, infer_sys_trans, next_mode, synthesize, ModeAutomaton};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtlError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: undeclared proposition {name}")]
    UndeclaredAtom { line: usize, name: String },
    #[error("line {line}: persistence goals (F G) are not allowed in sys_live")]
    PersistenceGoal { line: usize },
    #[error("specification outside the supported template: {0}")]
    TemplateViolation(String),
    #[error("unsynthesizable specification: {0}")]
    UnsynthesizableSpec(String),
}
