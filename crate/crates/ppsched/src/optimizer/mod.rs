//! Optimizer arithmetic and the post-validation protocol that keeps global
//! gradient checks off the pipeline's critical path.
//!
//! Synchronous training wants every stage's optimizer step conditioned on
//! global state — the all-stage gradient norm for clipping and a non-finite
//! check — but an all-reduce right before the step re-serializes the pipeline
//! exactly where a bubble-free layout has none. The protocol here replaces
//! the up-front synchronization with validation after the fact:
//!
//! 1. a partially reduced state (prefix sum of squared gradient norms plus a
//!    non-finite flag) flows from the first stage to the last, and each stage
//!    steps — or holds off — based on that prefix alone;
//! 2. the fully reduced state flows back during the next iteration's
//!    warm-up, and each stage then validates its provisional decision,
//!    rolling the step back in place and redoing it when the full state
//!    demands an amended gradient.
//!
//! Rolling back is cheap because the [`adamw`] step is arithmetically
//! reversible given the gradient it consumed — no parameter snapshots.
//! [`protocol::run_synchronized_baseline`] provides the reduce-first
//! reference semantics the protocol is checked against.

mod adamw;
mod protocol;

pub use adamw::{AdamWError, AdamWState, StepAction};
pub use protocol::{
    run_post_validation, run_post_validation_concurrent, run_synchronized_baseline, FaultKind,
    FaultPlan, FaultSpec, MessagePhase, ProtocolConfig, ProtocolError, ProtocolOutcome,
    StageDecision, Transcript, TranscriptEvent, ValidationVerdict,
};
