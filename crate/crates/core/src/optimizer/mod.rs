mod dcrab;
mod nelder_mead;

pub use dcrab::{dcrab_optimize, DcrabConfig, DcrabResult, SuperiterationRecord};
pub use nelder_mead::{
    nelder_mead, Constraint, HistoryEntry, Measured, NelderMeadConfig, OptimizerState, Parameter,
    SearchSpace, Status,
};
