//! Exact mixed-integer treatment of the pass-ordering problem.
//!
//! The schedule search answered heuristically by [`crate::autosched`] can be
//! posed exactly: pick an execution order for every stage's passes, subject
//! to the cross-stage forward/backward chains and the activation budget, so
//! that the longest per-stage span is minimal. This module provides three
//! entry points around that formulation:
//!
//! * [`build_model`] materializes the mixed-integer program — continuous
//!   end-time variables, one ordering binary per same-stage pass pair, and
//!   the chain/ordering/memory constraints — as a [`LinearProgram`];
//! * [`export_lp`] / [`parse_lp`] write and read the model in the plain LP
//!   text format, so any off-the-shelf solver can chew on it, and
//!   [`parse_solution_file`] + [`IlpModel::decode_solution`] turn a solver's
//!   variable assignment back into a [`crate::core::Schedule`];
//! * [`solve_exact`] is a self-contained branch-and-bound search over
//!   per-stage orderings, exact on oracle-sized instances, used to certify
//!   how close the heuristic lands.
//!
//! The exact solver optimizes over *executable* schedules: each ordering is
//! evaluated with the list-scheduling semantics of [`crate::sim::simulate`],
//! where every pass starts as soon as its stage and inputs allow. The LP
//! export keeps the full model semantics (a solver may also delay passes);
//! for any encoded schedule the two agree, which is what
//! [`IlpModel::evaluate`] checks.

mod lp;
mod model;
mod solve;

use thiserror::Error;

pub use lp::{export_lp, parse_lp, parse_solution_file, write_lp};
pub use model::{
    build_model, build_model_capped, Cmp, Constraint, Evaluation, IlpModel, LinearProgram, VarDef,
    VarKind, DEFAULT_VARIABLE_CAP,
};
pub use solve::{solve_exact, solve_exact_with, ExactSolution, SolveLimits};

/// Errors across model construction, text I/O, and the exact search.
#[derive(Debug, Error)]
pub enum IlpError {
    /// The ordering binaries grow quadratically in m; refuse absurd models.
    #[error("model needs {variables} variables, beyond the cap of {cap}")]
    ModelTooLarge { variables: usize, cap: usize },
    /// The exact search is an oracle for small instances, not a competitive
    /// solver; larger instances must raise the limits explicitly.
    #[error(
        "exact search capped at p <= {max_stages}, m <= {max_microbatches} \
         (got p={p}, m={m})"
    )]
    InstanceTooLarge { p: u32, m: u32, max_stages: u32, max_microbatches: u32 },
    /// Even a lone microbatch peaks at max(M_B, M_W) activation units.
    #[error("memory limit {limit} cannot fit a single microbatch (needs {needed})")]
    InfeasibleMemoryLimit { limit: i64, needed: i64 },
    /// The search ran out of feasible orderings (over-tight memory limit).
    #[error("no feasible ordering exists under the given memory limit")]
    Infeasible,
    /// A schedule handed to the model does not match its dimensions, or is
    /// not valid to begin with.
    #[error("schedule does not fit this model: {0}")]
    ScheduleMismatch(String),
    #[error("LP text, line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("assignment is missing variable {0}")]
    MissingVariable(String),
}
