//! Embedding, transcription and maximum-principle certification for
//! state-constrained control-polynomial optimal control problems, with
//! infimum-gap detection across the strict, extended and relaxed layers.

pub mod bundled;
pub mod cli;
pub mod cone;
pub mod embed;
pub mod error;
pub mod field;
pub mod gap;
pub mod integrate;
pub mod io;
pub mod lp;
pub mod model;
pub mod par;
pub mod pmp;
pub mod relax;
pub mod report;
pub mod solve;

pub use error::{Error, Result};
pub use model::{
    check_feasibility, eval_extended_dynamics, eval_fast_dynamics, load_problem, parse_problem,
    ControlSample, FeasibilityRecord, IntervalControl, Layer, NodeState, Process, ProblemSpec,
    SimplexControlRow,
};
