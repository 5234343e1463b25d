//! Analytic schedule simulator. Executes a [`Schedule`] under list-scheduling
//! semantics — every pass starts as soon as its stage reaches it in order and
//! all dependency edges have completed — and reports exact integer timings,
//! per-stage spans, the bubble, and activation-memory traces.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    dependency_edges, validate_schedule, MemoryModel, PassIndexer, PassKind, PassRef, Profile,
    Schedule, TimeUs, ValidationReport,
};

/// One executed pass with its start and end instants.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TimedPass {
    pub pass: PassRef,
    pub start: TimeUs,
    pub end: TimeUs,
}

/// Aggregates for one stage's execution.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: u32,
    /// Start of the stage's first pass.
    pub start: TimeUs,
    /// End of the stage's last pass.
    pub end: TimeUs,
    /// Sum of pass durations.
    pub busy: TimeUs,
    /// `end - start - busy`: idle time inside the stage's own span.
    pub idle: TimeUs,
}

impl StageStats {
    pub fn span(&self) -> TimeUs {
        self.end - self.start
    }
}

/// Outcome of [`simulate`].
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SimResult {
    /// Iteration cost: the largest per-stage span. Matching the span (rather
    /// than the global makespan) keeps repeated iterations honest — a stage
    /// re-enters the next iteration as soon as its own work is done.
    pub cost: TimeUs,
    /// Work one stage performs per iteration: m * c * (t_f + t_b + t_w).
    pub ideal_stage_work: TimeUs,
    /// `cost - ideal_stage_work` (non-negative).
    pub bubble: TimeUs,
    /// `bubble / cost`, in [0, 1).
    pub bubble_rate: f64,
    pub stages: Vec<StageStats>,
    /// Executed passes grouped per stage, in execution order.
    pub stage_passes: Vec<Vec<TimedPass>>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot simulate an invalid schedule: {0}")]
    Invalid(ValidationReport),
}

/// Runs the schedule under `profile` and returns exact timings.
///
/// Pass durations come from the profile by kind; for chunked placements they
/// are per chunk pass. The schedule is validated first, so the timing loop
/// itself cannot deadlock.
pub fn simulate(schedule: &Schedule, profile: &Profile) -> Result<SimResult, SimError> {
    let report = validate_schedule(schedule);
    if !report.is_ok() {
        return Err(SimError::Invalid(report));
    }

    let topo = &schedule.topology;
    let indexer = PassIndexer::new(topo);
    let total = indexer.total();

    // Longest-path over order edges + dependency edges (Kahn).
    let mut adjacency: Vec<Vec<(usize, TimeUs)>> = vec![Vec::new(); total];
    let mut indegree = vec![0u32; total];
    for order in &schedule.per_stage_order {
        for pair in order.windows(2) {
            adjacency[indexer.index(pair[0])].push((indexer.index(pair[1]), TimeUs::ZERO));
            indegree[indexer.index(pair[1])] += 1;
        }
    }
    for edge in dependency_edges(schedule, profile.t_comm) {
        adjacency[indexer.index(edge.from)].push((indexer.index(edge.to), edge.latency));
        indegree[indexer.index(edge.to)] += 1;
    }

    let mut kind_of = vec![PassKind::F; total];
    for order in &schedule.per_stage_order {
        for &pass in order {
            kind_of[indexer.index(pass)] = pass.kind;
        }
    }

    let mut earliest = vec![TimeUs::ZERO; total];
    let mut end = vec![TimeUs::ZERO; total];
    let mut queue: VecDeque<usize> = (0..total).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0usize;
    while let Some(node) = queue.pop_front() {
        visited += 1;
        end[node] = earliest[node] + profile.duration(kind_of[node]);
        for &(next, latency) in &adjacency[node] {
            let candidate = end[node] + latency;
            if candidate > earliest[next] {
                earliest[next] = candidate;
            }
            indegree[next] -= 1;
            if indegree[next] == 0 {
                queue.push_back(next);
            }
        }
    }
    debug_assert_eq!(visited, total, "validation guarantees acyclicity");

    let mut stage_passes = Vec::with_capacity(topo.stages as usize);
    let mut stages = Vec::with_capacity(topo.stages as usize);
    for (row, order) in schedule.per_stage_order.iter().enumerate() {
        let timed: Vec<TimedPass> = order
            .iter()
            .map(|&pass| {
                let idx = indexer.index(pass);
                TimedPass { pass, start: earliest[idx], end: end[idx] }
            })
            .collect();
        let start = timed.first().map_or(TimeUs::ZERO, |t| t.start);
        let finish = timed.last().map_or(TimeUs::ZERO, |t| t.end);
        let busy: TimeUs = timed.iter().map(|t| t.end - t.start).sum();
        stages.push(StageStats {
            stage: row as u32 + 1,
            start,
            end: finish,
            busy,
            idle: finish - start - busy,
        });
        stage_passes.push(timed);
    }

    let cost = stages.iter().map(StageStats::span).max().unwrap_or(TimeUs::ZERO);
    let ideal_stage_work =
        profile.pass_sum() * i64::from(topo.microbatches) * i64::from(topo.chunks_per_stage);
    let bubble = cost - ideal_stage_work;
    debug_assert!(!bubble.is_negative(), "a stage span cannot undercut its own work");
    let bubble_rate = if cost == TimeUs::ZERO { 0.0 } else { bubble.0 as f64 / cost.0 as f64 };

    Ok(SimResult { cost, ideal_stage_work, bubble, bubble_rate, stages, stage_passes })
}

/// One point of a stage's activation-level time series.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MemSample {
    /// Instant the level changed: F charges at start, B and W settle at end.
    pub at: TimeUs,
    pub pass: PassRef,
    /// Level right after the change.
    pub level: i64,
}

/// Activation-level time series for one stage.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: u32,
    pub samples: Vec<MemSample>,
    pub peak: i64,
    /// First sample that exceeded the limit, if one did.
    pub first_violation: Option<MemSample>,
}

/// Per-stage activation traces for an executed schedule.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub per_stage: Vec<StageTrace>,
    /// Largest stage peak.
    pub peak: i64,
    pub within_limit: bool,
}

/// Replays the executed passes against a [`MemoryModel`].
///
/// A forward's `m_b` units are charged when it *starts* (the activation must
/// exist for the pass to run), while B and W settle their deltas on
/// completion. Within a stage the passes are serial, so the event sequence is
/// already time-ordered.
pub fn memory_trace(result: &SimResult, mem: &MemoryModel) -> MemoryTrace {
    let mut per_stage = Vec::with_capacity(result.stage_passes.len());
    let mut peak = 0i64;
    let mut within_limit = true;
    for (row, passes) in result.stage_passes.iter().enumerate() {
        let mut level = 0i64;
        let mut stage_peak = 0i64;
        let mut samples = Vec::with_capacity(passes.len());
        let mut first_violation = None;
        for timed in passes {
            let (at, delta) = match timed.pass.kind {
                PassKind::F => (timed.start, mem.m_b),
                PassKind::B => (timed.end, mem.m_w - mem.m_b),
                PassKind::W => (timed.end, -mem.m_w),
            };
            level += delta;
            let sample = MemSample { at, pass: timed.pass, level };
            if level > stage_peak {
                stage_peak = level;
            }
            if first_violation.is_none() {
                if let Some(limit) = mem.m_limit {
                    if level > limit {
                        first_violation = Some(sample);
                    }
                }
            }
            samples.push(sample);
        }
        debug_assert_eq!(level, 0, "all activation memory must be released");
        if first_violation.is_some() {
            within_limit = false;
        }
        if stage_peak > peak {
            peak = stage_peak;
        }
        per_stage.push(StageTrace { stage: row as u32 + 1, samples, peak: stage_peak, first_violation });
    }
    MemoryTrace { per_stage, peak, within_limit }
}

/// Zero-bubble throughput ceiling implied by a measured run: a pipeline that
/// spends `bubble_rate` of its iteration idle can at best reach
/// `measured / (1 - bubble_rate)` once the bubble is fully reclaimed.
pub fn throughput_upper_bound(measured_throughput: f64, bubble_rate: f64) -> f64 {
    measured_throughput / (1.0 - bubble_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Topology;

    fn tiny(fused: bool) -> Schedule {
        let topology = Topology::linear(2, 1);
        let order = |stage: u32| {
            vec![
                PassRef::new(stage, 1, PassKind::F, 1),
                PassRef::new(stage, 1, PassKind::B, 1),
                PassRef::new(stage, 1, PassKind::W, 1),
            ]
        };
        Schedule { topology, per_stage_order: vec![order(1), order(2)], fused_bw: fused }
    }

    #[test]
    fn two_stage_single_microbatch_costs_five_units() {
        let result = simulate(&tiny(false), &Profile::uniform(TimeUs(1))).unwrap();
        // Stage 1: F [0,1], B [3,4], W [4,5] -> span 5. Stage 2: [1,4] -> span 3.
        assert_eq!(result.cost, TimeUs(5));
        assert_eq!(result.bubble, TimeUs(2));
        assert!((result.bubble_rate - 0.4).abs() < 1e-12);
        assert_eq!(result.stages[0].idle, TimeUs(2));
        assert_eq!(result.stages[1].idle, TimeUs(0));
    }

    #[test]
    fn comm_latency_stretches_the_chains() {
        let profile = Profile::new(TimeUs(1), TimeUs(1), TimeUs(1), TimeUs(10));
        let result = simulate(&tiny(false), &profile).unwrap();
        // F(2) starts at 11, B(2) ends 13, B(1) starts 23: span 25.
        assert_eq!(result.cost, TimeUs(25));
    }

    #[test]
    fn fused_backward_waits_for_upstream_w() {
        let result = simulate(&tiny(true), &Profile::uniform(TimeUs(1))).unwrap();
        // B(1,1) now waits for W(2,1) which ends at 4 -> stage 1 spans [0,6].
        assert_eq!(result.cost, TimeUs(6));
    }

    #[test]
    fn memory_trace_charges_f_at_start() {
        let result = simulate(&tiny(false), &Profile::uniform(TimeUs(1))).unwrap();
        let trace = memory_trace(&result, &MemoryModel::new(2, 1, None));
        let s1 = &trace.per_stage[0];
        assert_eq!(s1.peak, 2);
        assert_eq!(s1.samples[0].at, TimeUs(0));
        assert_eq!(s1.samples[0].level, 2);
        assert_eq!(s1.samples[1].level, 1); // B swaps m_b for m_w
        assert_eq!(s1.samples[2].level, 0);
        assert!(trace.within_limit);
        let tight = memory_trace(&result, &MemoryModel::new(2, 1, Some(1)));
        assert!(!tight.within_limit);
        assert_eq!(tight.per_stage[0].first_violation.unwrap().level, 2);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut s = tiny(false);
        s.per_stage_order[0].swap(0, 1);
        assert!(matches!(simulate(&s, &Profile::unit()), Err(SimError::Invalid(_))));
    }

    #[test]
    fn upper_bound_reclaims_the_bubble() {
        assert!((throughput_upper_bound(60.0, 0.25) - 80.0).abs() < 1e-12);
    }
}
