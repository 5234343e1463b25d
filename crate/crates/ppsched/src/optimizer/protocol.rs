//! Post-validation optimizer protocol over simulated pipeline stages.
//!
//! Instead of an all-reduce before every optimizer step, each stage steps on
//! a *prefix* of the global state and validates afterwards:
//!
//! * forward sweep — stage 1's local contribution (squared gradient norm and
//!   a non-finite flag) flows to stage 2, which folds in its own and passes
//!   the running prefix on, through stage p. A stage whose prefix is already
//!   non-finite skips its step outright (the full state can only stay
//!   non-finite); a stage whose prefix norm already exceeds the clipping
//!   threshold holds its step — clipping is certain but the final scale is
//!   not known yet; otherwise the stage steps provisionally. The last stage
//!   holds the complete reduction, so it always acts definitively.
//! * backward sweep — the fully reduced state travels from stage p back to
//!   stage 1 during the next iteration's warm-up. Each stage validates its
//!   provisional action: a clean full state legitimizes a plain step; a
//!   clipping full state forces an in-place rollback and a redo with the
//!   correctly scaled gradient; a non-finite full state forces a rollback
//!   with no redo. Held steps are performed now with the final scale, and
//!   skips are confirmed.
//!
//! Every message, decision, step, rollback, and verdict lands in a
//! [`Transcript`] that serializes to JSON. [`run_synchronized_baseline`]
//! implements the reduce-first semantics the protocol must be equivalent to,
//! sharing the fold order and the clipped-step arithmetic so that runs
//! without rollbacks agree bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adamw::AdamWState;

/// Which leg of the reduction a message belongs to.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessagePhase {
    /// Prefix state on its way from the first stage to the last.
    Partial,
    /// Fully reduced state on its way back from the last stage.
    Full,
}

/// A stage's provisional action during the forward sweep.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageDecision {
    /// Prefix clean and under the threshold: stepped with the raw gradient.
    Stepped,
    /// Only on the last stage, whose prefix is the full state: stepped with
    /// the definitively clipped gradient.
    SteppedClipped,
    /// Prefix norm already over the threshold: clipping is certain but the
    /// scale is not; the step waits for the full state.
    Held,
    /// Prefix already non-finite: the update is skipped for good.
    SkippedNonFinite,
}

/// Outcome of validating a provisional action against the full state.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationVerdict {
    /// The provisional step stands.
    Legitimate,
    /// Stepped plain, but the full norm demands clipping: rolled back and
    /// redone with the scaled gradient.
    RolledBackRedone,
    /// Stepped plain, but the full state is non-finite: rolled back, not
    /// redone.
    RolledBackSkipped,
    /// Held during the forward sweep; stepped now with the final scale.
    HeldStepped,
    /// Held during the forward sweep; the full state is non-finite, so the
    /// step never happens.
    HeldSkipped,
    /// Skipped on the prefix and the full state confirms it.
    ConfirmedSkip,
}

/// One recorded protocol event. Stages are 1-based, iterations 0-based.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Message {
        iteration: u32,
        from_stage: u32,
        to_stage: u32,
        phase: MessagePhase,
        #[serde(with = "lossless_f64")]
        accumulator: f64,
        non_finite: bool,
    },
    Decision {
        iteration: u32,
        stage: u32,
        decision: StageDecision,
    },
    Step {
        iteration: u32,
        stage: u32,
        clipped: bool,
    },
    Rollback {
        iteration: u32,
        stage: u32,
    },
    Validation {
        iteration: u32,
        stage: u32,
        verdict: ValidationVerdict,
    },
}

/// Full record of a protocol run.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Transcript {
    pub stages: u32,
    pub iterations: u32,
    pub clip_threshold: f64,
    pub events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn rollback_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, TranscriptEvent::Rollback { .. })).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcripts always serialize")
    }

    pub fn from_json(text: &str) -> Result<Transcript, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// JSON keeps NaN/Infinity out of its number grammar, so the accumulator is
/// written as a number when finite and as a marker string otherwise.
mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            x.serialize(s)
        } else if x.is_nan() {
            "NaN".serialize(s)
        } else if *x > 0.0 {
            "Infinity".serialize(s)
        } else {
            "-Infinity".serialize(s)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumberOrMarker {
        Number(f64),
        Marker(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match NumberOrMarker::deserialize(d)? {
            NumberOrMarker::Number(x) => Ok(x),
            NumberOrMarker::Marker(m) => match m.as_str() {
                "NaN" => Ok(f64::NAN),
                "Infinity" => Ok(f64::INFINITY),
                "-Infinity" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("unknown float marker {other:?}"))),
            },
        }
    }
}

/// An injected gradient defect.
#[derive(Copy, Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// First component becomes NaN.
    Nan,
    /// First component becomes +Infinity.
    Inf,
    /// Whole gradient multiplied by `factor` (drives norm clipping).
    Spike { factor: f64 },
}

/// One defect at a specific (iteration, stage). Stage is 1-based.
#[derive(Copy, Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FaultSpec {
    pub iteration: u32,
    pub stage: u32,
    pub fault: FaultKind,
}

/// A set of injected defects, loadable from a JSON config.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct FaultPlan {
    pub faults: Vec<FaultSpec>,
}

impl FaultPlan {
    pub fn clean() -> FaultPlan {
        FaultPlan::default()
    }

    pub fn from_json(text: &str) -> Result<FaultPlan, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fault plans always serialize")
    }

    fn apply(&self, iteration: u32, stage_1based: u32, g: &mut [f64]) {
        for spec in &self.faults {
            if spec.iteration == iteration && spec.stage == stage_1based {
                assert!(!g.is_empty(), "faults need at least one gradient component");
                match spec.fault {
                    FaultKind::Nan => g[0] = f64::NAN,
                    FaultKind::Inf => g[0] = f64::INFINITY,
                    FaultKind::Spike { factor } => {
                        for x in g.iter_mut() {
                            *x *= factor;
                        }
                    }
                }
            }
        }
    }
}

/// Shared run parameters.
#[derive(Copy, Clone, PartialEq, Debug)]
pub struct ProtocolConfig {
    pub iterations: u32,
    pub clip_threshold: f64,
}

/// Result of a protocol run: per-stage optimizer states plus the transcript.
#[derive(Clone, PartialEq, Debug)]
pub struct ProtocolOutcome {
    pub final_states: Vec<AdamWState>,
    pub transcript: Transcript,
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("stage {stage} starved waiting for the {phase:?} state of iteration {iteration}: the protocol deadlocked")]
    Deadlock { iteration: u32, stage: u32, phase: MessagePhase },
}

/// Running reduction: sum of squared gradient norms plus a non-finite flag.
#[derive(Copy, Clone, PartialEq, Debug, Default)]
struct Accum {
    sq: f64,
    non_finite: bool,
}

impl Accum {
    fn fold(self, other: Accum) -> Accum {
        Accum { sq: self.sq + other.sq, non_finite: self.non_finite || other.non_finite }
    }
}

fn contribution(g: &[f64]) -> Accum {
    let sq: f64 = g.iter().map(|x| x * x).sum();
    Accum { sq, non_finite: g.iter().any(|x| !x.is_finite()) || !sq.is_finite() }
}

/// What a stage holds between its provisional action and its validation.
struct PendingStep {
    iteration: u32,
    decision: StageDecision,
    gradient: Vec<f64>,
}

/// Per-stage logic shared by the deterministic and concurrent drivers: the
/// forward-sweep action and the validation, both pure in everything but the
/// optimizer state.
fn decide(
    state: &mut AdamWState,
    is_last: bool,
    prefix: Accum,
    gradient: Vec<f64>,
    iteration: u32,
    threshold: f64,
) -> (PendingStep, StageDecision, bool) {
    let decision = if prefix.non_finite {
        StageDecision::SkippedNonFinite
    } else if prefix.sq.sqrt() > threshold {
        if is_last {
            // The last stage's prefix is the full reduction; clip now.
            state.clipped_step(&gradient, threshold, prefix.sq.sqrt());
            StageDecision::SteppedClipped
        } else {
            StageDecision::Held
        }
    } else {
        state.step(&gradient);
        StageDecision::Stepped
    };
    let stepped = matches!(decision, StageDecision::Stepped | StageDecision::SteppedClipped);
    (PendingStep { iteration, decision, gradient }, decision, stepped)
}

/// Validation outcome: the verdict plus whether a rollback and/or a fresh
/// step happened (for transcript recording).
fn validate(
    state: &mut AdamWState,
    pending: PendingStep,
    full: Accum,
    threshold: f64,
) -> (ValidationVerdict, bool, bool) {
    let needs_clip = !full.non_finite && full.sq.sqrt() > threshold;
    match pending.decision {
        StageDecision::Stepped => {
            if full.non_finite {
                state.rollback(&pending.gradient).expect("a provisional step precedes rollback");
                (ValidationVerdict::RolledBackSkipped, true, false)
            } else if needs_clip {
                state.rollback(&pending.gradient).expect("a provisional step precedes rollback");
                state.clipped_step(&pending.gradient, threshold, full.sq.sqrt());
                (ValidationVerdict::RolledBackRedone, true, true)
            } else {
                (ValidationVerdict::Legitimate, false, false)
            }
        }
        StageDecision::SteppedClipped => {
            // Only the last stage clips eagerly, and it acted on the full
            // state, so its step is legitimate by construction.
            (ValidationVerdict::Legitimate, false, false)
        }
        StageDecision::Held => {
            if full.non_finite {
                (ValidationVerdict::HeldSkipped, false, false)
            } else {
                assert!(
                    needs_clip,
                    "a held step implies the full norm exceeds the threshold: the full \
                     sum of squares dominates every prefix"
                );
                state.clipped_step(&pending.gradient, threshold, full.sq.sqrt());
                (ValidationVerdict::HeldStepped, false, true)
            }
        }
        StageDecision::SkippedNonFinite => {
            assert!(
                full.non_finite,
                "a non-finite prefix forces a non-finite full state; the reduction never \
                 drops a flag"
            );
            (ValidationVerdict::ConfirmedSkip, false, false)
        }
    }
}

fn effective_gradient(
    gradients: &(dyn Fn(u32, u32) -> Vec<f64> + Sync),
    plan: &FaultPlan,
    iteration: u32,
    stage_1based: u32,
    dim: usize,
) -> Vec<f64> {
    let mut g = gradients(iteration, stage_1based);
    assert_eq!(g.len(), dim, "gradient length must match stage {stage_1based}'s parameters");
    plan.apply(iteration, stage_1based, &mut g);
    g
}

/// Runs the post-validation protocol on a deterministic round-based
/// scheduler: each iteration performs the previous iteration's backward
/// validation sweep (last stage first) and then the forward partial sweep
/// (first stage first), yielding a reproducible transcript. `gradients` maps
/// (iteration, 1-based stage) to that stage's local gradient.
pub fn run_post_validation(
    states: Vec<AdamWState>,
    cfg: &ProtocolConfig,
    gradients: &(dyn Fn(u32, u32) -> Vec<f64> + Sync),
    plan: &FaultPlan,
) -> Result<ProtocolOutcome, ProtocolError> {
    let p = states.len();
    assert!(p >= 1, "the protocol needs at least one stage");
    let mut states = states;
    let mut events = Vec::new();
    let mut pending: Vec<Option<PendingStep>> = (0..p).map(|_| None).collect();
    // Single-slot mailboxes; the round scheduler fills each before use.
    let mut partial_in: Vec<Option<Accum>> = vec![None; p];
    let mut full_in: Vec<Option<Accum>> = vec![None; p];
    let mut last_full: Option<Accum> = None;

    let validation_sweep = |states: &mut Vec<AdamWState>,
                                pending: &mut Vec<Option<PendingStep>>,
                                full_in: &mut Vec<Option<Accum>>,
                                last_full: &mut Option<Accum>,
                                events: &mut Vec<TranscriptEvent>,
                                iteration: u32|
     -> Result<(), ProtocolError> {
        for k in (0..p).rev() {
            let stage = k as u32 + 1;
            let full = if k == p - 1 {
                last_full.take().ok_or(ProtocolError::Deadlock {
                    iteration,
                    stage,
                    phase: MessagePhase::Full,
                })?
            } else {
                full_in[k].take().ok_or(ProtocolError::Deadlock {
                    iteration,
                    stage,
                    phase: MessagePhase::Full,
                })?
            };
            let held = pending[k].take().ok_or(ProtocolError::Deadlock {
                iteration,
                stage,
                phase: MessagePhase::Full,
            })?;
            assert_eq!(held.iteration, iteration, "validations run strictly in iteration order");
            let (verdict, rolled_back, restepped) =
                validate(&mut states[k], held, full, cfg.clip_threshold);
            if rolled_back {
                events.push(TranscriptEvent::Rollback { iteration, stage });
            }
            if restepped {
                events.push(TranscriptEvent::Step { iteration, stage, clipped: true });
            }
            events.push(TranscriptEvent::Validation { iteration, stage, verdict });
            if k > 0 {
                full_in[k - 1] = Some(full);
                events.push(TranscriptEvent::Message {
                    iteration,
                    from_stage: stage,
                    to_stage: stage - 1,
                    phase: MessagePhase::Full,
                    accumulator: full.sq,
                    non_finite: full.non_finite,
                });
            }
        }
        Ok(())
    };

    for iteration in 0..cfg.iterations {
        if iteration > 0 {
            validation_sweep(
                &mut states,
                &mut pending,
                &mut full_in,
                &mut last_full,
                &mut events,
                iteration - 1,
            )?;
        }
        // Forward partial sweep; contributions are precomputed so each
        // received prefix can be asserted against an independent refold.
        let grads: Vec<Vec<f64>> = (0..p)
            .map(|k| {
                effective_gradient(gradients, plan, iteration, k as u32 + 1, states[k].dim())
            })
            .collect();
        let contribs: Vec<Accum> = grads.iter().map(|g| contribution(g)).collect();
        let mut grads = grads.into_iter();
        for k in 0..p {
            let stage = k as u32 + 1;
            let inbound = if k == 0 {
                Accum::default()
            } else {
                partial_in[k].take().ok_or(ProtocolError::Deadlock {
                    iteration,
                    stage,
                    phase: MessagePhase::Partial,
                })?
            };
            let refold = contribs[..k].iter().fold(Accum::default(), |a, &c| a.fold(c));
            assert!(
                inbound.sq.to_bits() == refold.sq.to_bits()
                    && inbound.non_finite == refold.non_finite,
                "stage {stage}'s received prefix must equal the fold of stages before it"
            );
            let acc = inbound.fold(contribs[k]);
            let g = grads.next().expect("one gradient per stage");
            let (held, decision, stepped) =
                decide(&mut states[k], k == p - 1, acc, g, iteration, cfg.clip_threshold);
            events.push(TranscriptEvent::Decision { iteration, stage, decision });
            if stepped {
                events.push(TranscriptEvent::Step {
                    iteration,
                    stage,
                    clipped: decision == StageDecision::SteppedClipped,
                });
            }
            pending[k] = Some(held);
            if k + 1 < p {
                partial_in[k + 1] = Some(acc);
                events.push(TranscriptEvent::Message {
                    iteration,
                    from_stage: stage,
                    to_stage: stage + 1,
                    phase: MessagePhase::Partial,
                    accumulator: acc.sq,
                    non_finite: acc.non_finite,
                });
            } else {
                last_full = Some(acc);
            }
        }
    }
    if cfg.iterations > 0 {
        // The last iteration has no successor warm-up; flush its validations.
        validation_sweep(
            &mut states,
            &mut pending,
            &mut full_in,
            &mut last_full,
            &mut events,
            cfg.iterations - 1,
        )?;
    }

    Ok(ProtocolOutcome {
        final_states: states,
        transcript: Transcript {
            stages: p as u32,
            iterations: cfg.iterations,
            clip_threshold: cfg.clip_threshold,
            events,
        },
    })
}

/// Reference semantics: fully reduce (in stage order) before any stage
/// steps, then let every stage act on the complete state. Shares the fold
/// and clipped-step arithmetic with the protocol so clean runs agree
/// bitwise.
pub fn run_synchronized_baseline(
    states: Vec<AdamWState>,
    cfg: &ProtocolConfig,
    gradients: &(dyn Fn(u32, u32) -> Vec<f64> + Sync),
    plan: &FaultPlan,
) -> Vec<AdamWState> {
    let p = states.len();
    assert!(p >= 1, "the baseline needs at least one stage");
    let mut states = states;
    for iteration in 0..cfg.iterations {
        let grads: Vec<Vec<f64>> = (0..p)
            .map(|k| {
                effective_gradient(gradients, plan, iteration, k as u32 + 1, states[k].dim())
            })
            .collect();
        let full = grads
            .iter()
            .fold(Accum::default(), |a, g| a.fold(contribution(g)));
        if full.non_finite {
            continue; // skip: no step, timestamps untouched
        }
        for k in 0..p {
            states[k].clipped_step(&grads[k], cfg.clip_threshold, full.sq.sqrt());
        }
    }
    states
}

/// Free-running variant: one thread per stage, channels for both sweeps, and
/// the same per-stage logic as [`run_post_validation`]. Message interleaving
/// across stages is nondeterministic, but each stage's arithmetic sequence
/// is identical to the deterministic driver's, so final states match it
/// bitwise. Returns final states only; transcripts come from the
/// deterministic mode.
pub fn run_post_validation_concurrent(
    states: Vec<AdamWState>,
    cfg: &ProtocolConfig,
    gradients: &(dyn Fn(u32, u32) -> Vec<f64> + Sync),
    plan: &FaultPlan,
) -> Result<Vec<AdamWState>, ProtocolError> {
    use std::sync::mpsc;

    let p = states.len();
    assert!(p >= 1, "the protocol needs at least one stage");
    let threshold = cfg.clip_threshold;
    let iterations = cfg.iterations;

    // down[k]: partial from stage k to k+1; up[k]: full from stage k+1 to k.
    let mut down_tx = Vec::new();
    let mut down_rx = Vec::new();
    let mut up_tx = Vec::new();
    let mut up_rx = Vec::new();
    for _ in 0..p.saturating_sub(1) {
        let (tx, rx) = mpsc::channel::<Accum>();
        down_tx.push(tx);
        down_rx.push(rx);
        let (tx, rx) = mpsc::channel::<Accum>();
        up_tx.push(tx);
        up_rx.push(rx);
    }

    let mut results: Vec<Option<Result<AdamWState, ProtocolError>>> = (0..p).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (k, mut state) in states.into_iter().enumerate() {
            let rx_prev = if k > 0 { Some(down_rx.remove(0)) } else { None };
            let tx_next = if k + 1 < p { Some(down_tx.remove(0)) } else { None };
            let rx_full = if k + 1 < p { Some(up_rx.remove(0)) } else { None };
            let tx_full_prev = if k > 0 { Some(up_tx.remove(0)) } else { None };
            handles.push(scope.spawn(move || -> Result<AdamWState, ProtocolError> {
                let stage = k as u32 + 1;
                let is_last = k == p - 1;
                let mut held: Option<PendingStep> = None;
                let mut own_full: Option<Accum> = None;
                let validate_pending = |state: &mut AdamWState,
                                            held: &mut Option<PendingStep>,
                                            own_full: &mut Option<Accum>,
                                            rx_full: &Option<mpsc::Receiver<Accum>>,
                                            iteration: u32|
                 -> Result<(), ProtocolError> {
                    let full = if is_last {
                        own_full.take().expect("last stage keeps its own full state")
                    } else {
                        rx_full
                            .as_ref()
                            .expect("inner stages receive the full state")
                            .recv()
                            .map_err(|_| ProtocolError::Deadlock {
                                iteration,
                                stage,
                                phase: MessagePhase::Full,
                            })?
                    };
                    let pending = held.take().expect("every iteration leaves a pending action");
                    assert_eq!(pending.iteration, iteration, "validations run in iteration order");
                    validate(state, pending, full, threshold);
                    if let Some(tx) = &tx_full_prev {
                        // A dropped receiver means the neighbor already
                        // failed; its own error surfaces the problem.
                        let _ = tx.send(full);
                    }
                    Ok(())
                };
                for iteration in 0..iterations {
                    if iteration > 0 {
                        validate_pending(&mut state, &mut held, &mut own_full, &rx_full, iteration - 1)?;
                    }
                    let inbound = match &rx_prev {
                        None => Accum::default(),
                        Some(rx) => rx.recv().map_err(|_| ProtocolError::Deadlock {
                            iteration,
                            stage,
                            phase: MessagePhase::Partial,
                        })?,
                    };
                    let g = effective_gradient(gradients, plan, iteration, stage, state.dim());
                    let acc = inbound.fold(contribution(&g));
                    let (pending, _, _) =
                        decide(&mut state, is_last, acc, g, iteration, threshold);
                    held = Some(pending);
                    if let Some(tx) = &tx_next {
                        let _ = tx.send(acc);
                    } else {
                        own_full = Some(acc);
                    }
                }
                if iterations > 0 {
                    validate_pending(&mut state, &mut held, &mut own_full, &rx_full, iterations - 1)?;
                }
                Ok(state)
            }));
        }
        for (k, handle) in handles.into_iter().enumerate() {
            results[k] = Some(handle.join().expect("stage threads do not panic"));
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every stage reports a result"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: usize = 4;
    const DIM: usize = 3;

    fn fresh_states() -> Vec<AdamWState> {
        (0..P)
            .map(|k| {
                let theta: Vec<f64> = (0..DIM).map(|i| (k * DIM + i) as f64 * 0.25 - 1.0).collect();
                AdamWState::new(0.05, 0.9, 0.999, 1e-8, 0.01, theta).unwrap()
            })
            .collect()
    }

    /// Deterministic pseudo-random gradients, identical for both engines.
    fn grad_table(iterations: u32) -> Vec<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9E37_79B9);
        (0..iterations)
            .map(|_| {
                (0..P)
                    .map(|_| (0..DIM).map(|_| rng.gen_range(-0.4..0.4)).collect())
                    .collect()
            })
            .collect()
    }

    fn lookup(table: &[Vec<Vec<f64>>]) -> impl Fn(u32, u32) -> Vec<f64> + Sync + '_ {
        move |iteration, stage| table[iteration as usize][stage as usize - 1].clone()
    }

    fn assert_close(a: &[AdamWState], b: &[AdamWState], what: &str) {
        for (sa, sb) in a.iter().zip(b) {
            assert_eq!(sa.t, sb.t, "{what}: timestamps diverged");
            for i in 0..sa.dim() {
                let tol = 1e-12 * sb.theta[i].abs().max(1.0);
                assert!(
                    (sa.theta[i] - sb.theta[i]).abs() <= tol,
                    "{what}: param {i} {} vs {}",
                    sa.theta[i],
                    sb.theta[i]
                );
            }
        }
    }

    fn assert_bitwise(a: &[AdamWState], b: &[AdamWState], what: &str) {
        for (sa, sb) in a.iter().zip(b) {
            assert_eq!(sa.t, sb.t, "{what}: timestamps diverged");
            for i in 0..sa.dim() {
                assert_eq!(
                    sa.theta[i].to_bits(),
                    sb.theta[i].to_bits(),
                    "{what}: param {i} differs in bits"
                );
            }
        }
    }

    #[test]
    fn clean_runs_match_the_baseline_bitwise_with_zero_rollbacks() {
        let cfg = ProtocolConfig { iterations: 6, clip_threshold: 1e6 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        let plan = FaultPlan::clean();
        let outcome = run_post_validation(fresh_states(), &cfg, &grads, &plan).unwrap();
        let baseline = run_synchronized_baseline(fresh_states(), &cfg, &grads, &plan);
        assert_eq!(outcome.transcript.rollback_count(), 0, "clean runs never roll back");
        assert_bitwise(&outcome.final_states, &baseline, "clean run");
        assert!(outcome
            .transcript
            .events
            .iter()
            .all(|e| !matches!(
                e,
                TranscriptEvent::Validation { verdict, .. }
                if *verdict != ValidationVerdict::Legitimate
            )));
    }

    #[test]
    fn nan_fault_rolls_back_early_stages_and_matches_a_skipping_baseline() {
        let cfg = ProtocolConfig { iterations: 5, clip_threshold: 1e6 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        let plan = FaultPlan {
            faults: vec![FaultSpec { iteration: 2, stage: 3, fault: FaultKind::Nan }],
        };
        let outcome = run_post_validation(fresh_states(), &cfg, &grads, &plan).unwrap();
        let baseline = run_synchronized_baseline(fresh_states(), &cfg, &grads, &plan);
        // Stages 1 and 2 stepped on a clean prefix and must undo; stages 3
        // and 4 saw the poisoned prefix and never stepped.
        assert_eq!(outcome.transcript.rollback_count(), 2);
        let verdicts: Vec<ValidationVerdict> = outcome
            .transcript
            .events
            .iter()
            .filter_map(|e| match e {
                TranscriptEvent::Validation { iteration: 2, verdict, .. } => Some(*verdict),
                _ => None,
            })
            .collect();
        assert_eq!(
            verdicts,
            vec![
                ValidationVerdict::ConfirmedSkip,
                ValidationVerdict::ConfirmedSkip,
                ValidationVerdict::RolledBackSkipped,
                ValidationVerdict::RolledBackSkipped,
            ],
            "validation sweep runs from the last stage down"
        );
        assert_close(&outcome.final_states, &baseline, "nan fault");
        for st in &outcome.final_states {
            assert_eq!(st.t, cfg.iterations - 1, "the poisoned iteration never counts a step");
        }
    }

    #[test]
    fn late_spike_forces_rollback_and_clipped_redo() {
        let cfg = ProtocolConfig { iterations: 4, clip_threshold: 1.0 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        // Spike on the last stage: every earlier stage steps plain on its
        // clean prefix, then must roll back and redo clipped.
        let plan = FaultPlan {
            faults: vec![FaultSpec { iteration: 1, stage: P as u32, fault: FaultKind::Spike { factor: 50.0 } }],
        };
        let outcome = run_post_validation(fresh_states(), &cfg, &grads, &plan).unwrap();
        let baseline = run_synchronized_baseline(fresh_states(), &cfg, &grads, &plan);
        assert_eq!(outcome.transcript.rollback_count(), P - 1);
        let redone = outcome
            .transcript
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    TranscriptEvent::Validation { iteration: 1, verdict: ValidationVerdict::RolledBackRedone, .. }
                )
            })
            .count();
        assert_eq!(redone, P - 1);
        assert_close(&outcome.final_states, &baseline, "late spike");
    }

    #[test]
    fn early_spike_holds_later_stages_and_needs_no_rollback() {
        let cfg = ProtocolConfig { iterations: 3, clip_threshold: 1.0 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        // Spike on stage 1: every stage's prefix is already over the
        // threshold, so everyone holds (or clips eagerly on the last stage)
        // and nobody ever rolls back — the final states match the baseline
        // bit for bit.
        let plan = FaultPlan {
            faults: vec![FaultSpec { iteration: 0, stage: 1, fault: FaultKind::Spike { factor: 40.0 } }],
        };
        let outcome = run_post_validation(fresh_states(), &cfg, &grads, &plan).unwrap();
        let baseline = run_synchronized_baseline(fresh_states(), &cfg, &grads, &plan);
        assert_eq!(outcome.transcript.rollback_count(), 0);
        let held = outcome
            .transcript
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    TranscriptEvent::Decision { iteration: 0, decision: StageDecision::Held, .. }
                )
            })
            .count();
        assert_eq!(held, P - 1, "all but the last stage hold their step");
        assert_bitwise(&outcome.final_states, &baseline, "early spike");
    }

    #[test]
    fn consecutive_faulted_iterations_validate_in_order() {
        let cfg = ProtocolConfig { iterations: 6, clip_threshold: 1.0 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        let plan = FaultPlan {
            faults: vec![
                FaultSpec { iteration: 2, stage: 2, fault: FaultKind::Inf },
                FaultSpec { iteration: 3, stage: 4, fault: FaultKind::Spike { factor: 30.0 } },
            ],
        };
        let outcome = run_post_validation(fresh_states(), &cfg, &grads, &plan).unwrap();
        let baseline = run_synchronized_baseline(fresh_states(), &cfg, &grads, &plan);
        let validated: Vec<u32> = outcome
            .transcript
            .events
            .iter()
            .filter_map(|e| match e {
                TranscriptEvent::Validation { iteration, .. } => Some(*iteration),
                _ => None,
            })
            .collect();
        let mut sorted = validated.clone();
        sorted.sort();
        assert_eq!(validated, sorted, "validations never run out of iteration order");
        assert_close(&outcome.final_states, &baseline, "back-to-back faults");
    }

    #[test]
    fn partial_messages_carry_exact_prefix_sums() {
        let cfg = ProtocolConfig { iterations: 3, clip_threshold: 1e6 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        let outcome =
            run_post_validation(fresh_states(), &cfg, &grads, &FaultPlan::clean()).unwrap();
        for event in &outcome.transcript.events {
            if let TranscriptEvent::Message {
                iteration,
                to_stage,
                phase: MessagePhase::Partial,
                accumulator,
                ..
            } = event
            {
                let expect: f64 = (1..*to_stage)
                    .map(|s| {
                        table[*iteration as usize][s as usize - 1]
                            .iter()
                            .map(|x| x * x)
                            .sum::<f64>()
                    })
                    .sum();
                assert_eq!(
                    accumulator.to_bits(),
                    expect.to_bits(),
                    "prefix into stage {to_stage} at iteration {iteration}"
                );
            }
        }
    }

    #[test]
    fn transcripts_round_trip_through_json_even_with_non_finite_accumulators() {
        let cfg = ProtocolConfig { iterations: 3, clip_threshold: 1.0 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        let plan = FaultPlan {
            faults: vec![FaultSpec { iteration: 1, stage: 1, fault: FaultKind::Nan }],
        };
        let outcome = run_post_validation(fresh_states(), &cfg, &grads, &plan).unwrap();
        let json = outcome.transcript.to_json();
        let back = Transcript::from_json(&json).expect("transcript JSON parses back");
        // NaN accumulators forbid a direct equality; compare via re-encoding.
        assert_eq!(back.to_json(), json);
        assert_eq!(back.events.len(), outcome.transcript.events.len());
    }

    #[test]
    fn fault_plans_round_trip_through_json() {
        let plan = FaultPlan {
            faults: vec![
                FaultSpec { iteration: 1, stage: 2, fault: FaultKind::Nan },
                FaultSpec { iteration: 4, stage: 1, fault: FaultKind::Spike { factor: 12.5 } },
            ],
        };
        let parsed = FaultPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(parsed, plan);
    }

    #[test]
    fn concurrent_mode_matches_the_deterministic_driver_bitwise() {
        let cfg = ProtocolConfig { iterations: 5, clip_threshold: 1.0 };
        let table = grad_table(cfg.iterations);
        let grads = lookup(&table);
        for plan in [
            FaultPlan::clean(),
            FaultPlan { faults: vec![FaultSpec { iteration: 1, stage: 3, fault: FaultKind::Nan }] },
            FaultPlan {
                faults: vec![FaultSpec { iteration: 2, stage: 4, fault: FaultKind::Spike { factor: 25.0 } }],
            },
        ] {
            let det = run_post_validation(fresh_states(), &cfg, &grads, &plan).unwrap();
            let conc = run_post_validation_concurrent(fresh_states(), &cfg, &grads, &plan).unwrap();
            assert_bitwise(&det.final_states, &conc, "concurrent vs deterministic");
        }
    }

    #[test]
    fn single_stage_protocol_degenerates_to_the_baseline() {
        let cfg = ProtocolConfig { iterations: 4, clip_threshold: 0.5 };
        let state = vec![AdamWState::new(0.05, 0.9, 0.999, 1e-8, 0.0, vec![1.0, -1.0]).unwrap()];
        let grads = |i: u32, _s: u32| vec![0.3 * (i as f64 + 1.0), -0.2];
        let plan = FaultPlan::clean();
        let outcome = run_post_validation(state.clone(), &cfg, &grads, &plan).unwrap();
        let baseline = run_synchronized_baseline(state, &cfg, &grads, &plan);
        assert_eq!(outcome.transcript.rollback_count(), 0);
        assert_bitwise(&outcome.final_states, &baseline, "single stage");
    }
}
