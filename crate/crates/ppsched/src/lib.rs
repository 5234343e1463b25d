//! Synthesis, analytic simulation, and analysis of pipeline-parallel training
//! schedules built around a split backward pass.
//!
//! Splitting each microbatch's backward into its input-gradient half (`B`)
//! and weight-gradient half (`W`) turns the classic pipeline "bubble" into a
//! packing problem: only `B` sits on the cross-stage critical chain, so `W`
//! passes become movable filler. This crate provides:
//!
//! * [`core`] — schedule artifacts, validation, and the dependency DAG;
//! * [`costmodel`] — transformer flop/activation estimates behind the default
//!   pass-time ratios;
//! * [`sim`] — an exact list-scheduling simulator with memory traces;
//! * [`handcrafted`] — the classic 1F1B family and the fixed-layout
//!   bubble-reducing layouts, plus their closed-form costs;
//! * [`zbv`] — the V-shaped two-chunks-per-stage layout that reaches zero
//!   bubble within 1F1B's activation budget;
//! * [`autosched`] — a profile-driven heuristic synthesizer with grid search
//!   and memory sweeps;
//! * [`ilp`] — an exact mixed-integer formulation, LP-file export, and a
//!   small branch-and-bound solver for oracle-sized instances;
//! * [`optimizer`] — the post-validation optimizer-step protocol that keeps
//!   gradient clipping and non-finite checks off the critical path.

pub mod autosched;
pub mod core;
pub mod costmodel;
pub mod handcrafted;
pub mod ilp;
pub mod optimizer;
pub mod sim;
pub mod zbv;
