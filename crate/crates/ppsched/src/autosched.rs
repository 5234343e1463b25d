//! Automatic schedule search under an activation-memory budget.
//!
//! The search builds a schedule stage by stage on a simulated timeline:
//! each stage fills its warm-up with as many forwards as memory and the
//! first backward's arrival allow, then alternates F and B, spending weight
//! passes on gaps the dependency chains would otherwise leave idle (or when
//! the memory limit forces a recycle). Two binary knobs — an extra warm-up
//! forward, and skipping a forward when a stage runs too far ahead of its
//! successor — span a small grid; [`grid_search`] picks the best of the
//! four runs by simulated cost.

use std::collections::VecDeque;

use thiserror::Error;

use crate::core::{MemoryModel, PassKind, PassRef, Profile, Schedule, TimeUs, Topology};
use crate::sim::{memory_trace, simulate};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AutoschedError {
    #[error("p and m must both be at least 1")]
    EmptyPipeline,
    #[error("schedule search requires a memory limit")]
    MissingMemoryLimit,
    #[error("memory limit {limit} cannot hold a single forward activation ({m_b})")]
    InfeasibleMemoryLimit { limit: i64, m_b: i64 },
    #[error("warm-up analysis requires a positive forward time")]
    ZeroForwardTime,
}

/// The two binary hyperparameters of the search.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct HeuristicParams {
    /// Schedule one more warm-up F into a sub-`T_F` gap even though it
    /// delays the first B.
    pub extra_warmup_f: bool,
    /// Replace an F by a ready B when the stage already leads its successor
    /// by more than one F and the swap costs no extra idle time.
    pub skip_excess_f: bool,
}

impl HeuristicParams {
    /// All four combinations, in lexicographic order.
    pub const GRID: [HeuristicParams; 4] = [
        HeuristicParams { extra_warmup_f: false, skip_excess_f: false },
        HeuristicParams { extra_warmup_f: false, skip_excess_f: true },
        HeuristicParams { extra_warmup_f: true, skip_excess_f: false },
        HeuristicParams { extra_warmup_f: true, skip_excess_f: true },
    ];
}

/// Problem statement for the automatic search.
#[derive(Copy, Clone, Debug)]
pub struct SearchInput {
    pub stages: u32,
    pub microbatches: u32,
    pub profile: Profile,
    /// Per-pass memory deltas; `m_limit` must be set and at least `m_b`.
    pub memory: MemoryModel,
}

impl SearchInput {
    pub fn new(stages: u32, microbatches: u32, profile: Profile, memory: MemoryModel) -> SearchInput {
        SearchInput { stages, microbatches, profile, memory }
    }

    fn validated_limit(&self) -> Result<i64, AutoschedError> {
        if self.stages == 0 || self.microbatches == 0 {
            return Err(AutoschedError::EmptyPipeline);
        }
        let limit = self.memory.m_limit.ok_or(AutoschedError::MissingMemoryLimit)?;
        if limit < self.memory.m_b {
            return Err(AutoschedError::InfeasibleMemoryLimit { limit, m_b: self.memory.m_b });
        }
        Ok(limit)
    }
}

// ── Construction ────────────────────────────────────────────────────────

#[derive(Copy, Clone)]
struct Candidate {
    start: TimeUs,
    kind: PassKind,
    mb: u32,
}

struct Agent {
    cursor: TimeUs,
    level: i64,
    f_done: u32,
    b_done: u32,
    pending_w: VecDeque<u32>,
    cum_bubble: TimeUs,
    next_main: PassKind,
    seq: Vec<PassRef>,
}

struct Builder {
    p: usize,
    m: u32,
    profile: Profile,
    mem: MemoryModel,
    limit: i64,
    params: HeuristicParams,
    agents: Vec<Agent>,
    f_end: Vec<Vec<Option<TimeUs>>>,
    b_end: Vec<Vec<Option<TimeUs>>>,
    /// Construction order of all emissions, for auditing the stay-ahead rule.
    log: Vec<(u32, PassKind)>,
}

impl Builder {
    fn new(input: &SearchInput, params: HeuristicParams, limit: i64) -> Builder {
        let p = input.stages as usize;
        let m = input.microbatches;
        let empty = vec![None; m as usize];
        Builder {
            p,
            m,
            profile: input.profile,
            mem: input.memory,
            limit,
            params,
            agents: (0..p)
                .map(|_| Agent {
                    cursor: TimeUs::ZERO,
                    level: 0,
                    f_done: 0,
                    b_done: 0,
                    pending_w: VecDeque::new(),
                    cum_bubble: TimeUs::ZERO,
                    next_main: PassKind::F,
                    seq: Vec::with_capacity(3 * m as usize),
                })
                .collect(),
            f_end: vec![empty.clone(); p],
            b_end: vec![empty; p],
            log: Vec::with_capacity(p * 3 * m as usize),
        }
    }

    /// Next forward for a stage, honoring the dependency chain and the
    /// stay-ahead rule: stage i plans its j-th F only once stage i−1 has
    /// planned min(j+1, m) forwards, so no stage hoards forwards its
    /// predecessor has not secured. Memory is checked by the caller.
    fn forward_candidate(&self, idx: usize) -> Option<Candidate> {
        let a = &self.agents[idx];
        let j = a.f_done as usize;
        if j >= self.m as usize {
            return None;
        }
        let mut start = a.cursor;
        if idx > 0 {
            let lead = (j + 2).min(self.m as usize);
            if (self.agents[idx - 1].f_done as usize) < lead {
                return None;
            }
            let chain = self.f_end[idx - 1][j]? + self.profile.t_comm;
            start = start.max(chain);
        }
        Some(Candidate { start, kind: PassKind::F, mb: j as u32 + 1 })
    }

    /// Next backward for a stage: the local forward must exist and, below
    /// the last stage, the successor's backward must already be scheduled.
    fn backward_candidate(&self, idx: usize) -> Option<Candidate> {
        let a = &self.agents[idx];
        let j = a.b_done as usize;
        if j >= a.f_done as usize {
            return None;
        }
        let mut start = a.cursor;
        if idx + 1 < self.p {
            start = start.max(self.b_end[idx + 1][j]? + self.profile.t_comm);
        }
        Some(Candidate { start, kind: PassKind::B, mb: j as u32 + 1 })
    }

    fn fits_forward(&self, idx: usize) -> bool {
        self.agents[idx].level + self.mem.m_b <= self.limit
    }

    /// Dependency floor for a stage's first backward: the first microbatch
    /// must traverse all forwards and the backwards down to this stage.
    fn static_first_b_bound(&self, idx: usize) -> TimeUs {
        let p = self.p as i64;
        let hops_back = (self.p - 1 - idx) as i64;
        self.profile.t_f * p
            + self.profile.t_comm * (p - 1)
            + (self.profile.t_b + self.profile.t_comm) * hops_back
    }

    fn first_b_ready(&self, idx: usize) -> Option<TimeUs> {
        let a = &self.agents[idx];
        if a.f_done == 0 {
            return None;
        }
        if idx + 1 < self.p {
            Some(self.b_end[idx + 1][0]? + self.profile.t_comm)
        } else {
            self.f_end[idx][0]
        }
    }

    fn decide_warmup(&self, idx: usize) -> Option<Candidate> {
        let a = &self.agents[idx];
        let forward = self.forward_candidate(idx);
        let fits = self.fits_forward(idx);
        match self.first_b_ready(idx) {
            Some(ready) => {
                let b_start = ready.max(a.cursor);
                if let Some(f) = forward {
                    if fits && f.start + self.profile.t_f <= b_start {
                        return Some(f);
                    }
                    // One more F into the residual sub-T_F gap, at the
                    // price of delaying the first B.
                    if fits && self.params.extra_warmup_f && f.start < b_start {
                        return Some(f);
                    }
                }
                Some(Candidate { start: b_start, kind: PassKind::B, mb: 1 })
            }
            None => {
                // The first backward's arrival is unknown; schedule only
                // forwards that provably cannot delay it.
                if let Some(f) = forward {
                    if fits && f.start + self.profile.t_f <= self.static_first_b_bound(idx) {
                        return Some(f);
                    }
                }
                None
            }
        }
    }

    /// Applies the gap rule to a chosen main pass: a pending W runs first
    /// when it fully fits the idle window, or when even a smaller gap would
    /// push this stage's cumulative bubble past every other stage's.
    fn with_gap_rule(&self, idx: usize, main: Candidate) -> Candidate {
        let a = &self.agents[idx];
        let gap = main.start - a.cursor;
        if gap > TimeUs::ZERO {
            if let Some(&mb) = a.pending_w.front() {
                let others_max = self
                    .agents
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != idx)
                    .map(|(_, other)| other.cum_bubble)
                    .max()
                    .unwrap_or(TimeUs::ZERO);
                if gap >= self.profile.t_w || a.cum_bubble + gap > others_max {
                    return Candidate { start: a.cursor, kind: PassKind::W, mb };
                }
            }
        }
        main
    }

    /// True when the only thing holding back this stage's next forward is
    /// the scheduled-F lead on its predecessor (one emission short).
    fn gate_blocked_only(&self, idx: usize) -> bool {
        if idx == 0 {
            return false;
        }
        let j = self.agents[idx].f_done as usize;
        if j >= self.m as usize {
            return false;
        }
        let lead = (j + 2).min(self.m as usize);
        (self.agents[idx - 1].f_done as usize) == lead - 1
    }

    fn decide_steady(&self, idx: usize) -> Option<Candidate> {
        let a = &self.agents[idx];
        let mut desired = a.next_main;
        if a.f_done == self.m {
            desired = PassKind::B;
        } else if a.b_done == a.f_done || a.b_done == self.m {
            desired = PassKind::F;
        }
        // A forward that is ready right now outranks a queued backward while
        // the successor is gate-bound on this stage's F count: relaying it
        // immediately keeps the terminal forward/backward cascade dense,
        // and the deferred backward costs nothing because its consumer is
        // queue-saturated whenever the lead is this tight.
        if desired == PassKind::B
            && idx + 1 < self.p
            && a.f_done < self.agents[idx + 1].f_done + 2
            && self.fits_forward(idx)
        {
            if let Some(f) = self.forward_candidate(idx) {
                if f.start <= a.cursor {
                    return Some(f);
                }
            }
        }
        if desired == PassKind::F {
            if !self.fits_forward(idx) {
                // Recycle memory before the forward can charge.
                if let Some(&mb) = a.pending_w.front() {
                    return Some(Candidate { start: a.cursor, kind: PassKind::W, mb });
                }
                return self.backward_candidate(idx).map(|b| self.with_gap_rule(idx, b));
            }
            match self.forward_candidate(idx) {
                Some(f) => {
                    if self.params.skip_excess_f && idx + 1 < self.p {
                        let excess = self.agents[idx].f_done >= self.agents[idx + 1].f_done + 2;
                        if excess {
                            if let Some(b) = self.backward_candidate(idx) {
                                if b.start <= f.start {
                                    return Some(self.with_gap_rule(idx, b));
                                }
                            }
                        }
                    }
                    Some(self.with_gap_rule(idx, f))
                }
                None => {
                    // The gate lifts as soon as the predecessor emits its
                    // next forward; a short idle wait beats occupying the
                    // cursor with a backward when that emission is imminent.
                    if self.gate_blocked_only(idx) {
                        if let Some(up) = self.forward_candidate(idx - 1) {
                            if up.start <= a.cursor + self.profile.t_b {
                                return None;
                            }
                        }
                    }
                    // Forward blocked upstream; a backward keeps the stage busy.
                    self.backward_candidate(idx).map(|b| self.with_gap_rule(idx, b))
                }
            }
        } else {
            self.backward_candidate(idx).map(|b| self.with_gap_rule(idx, b))
        }
    }

    fn decide(&self, idx: usize) -> Option<Candidate> {
        let a = &self.agents[idx];
        if a.f_done == self.m && a.b_done == self.m {
            // Main passes exhausted: drain the weight backlog in order.
            return a
                .pending_w
                .front()
                .map(|&mb| Candidate { start: a.cursor, kind: PassKind::W, mb });
        }
        if a.b_done == 0 {
            self.decide_warmup(idx)
        } else {
            self.decide_steady(idx)
        }
    }

    /// Progress guarantee for degenerate corners (e.g. memory limits close
    /// to a single activation): the stay-ahead rule is waived for the
    /// lowest stage whose forward is otherwise runnable.
    fn fallback(&self) -> Option<(usize, Candidate)> {
        for idx in 0..self.p {
            let a = &self.agents[idx];
            let j = a.f_done as usize;
            if j >= self.m as usize || !self.fits_forward(idx) {
                continue;
            }
            let chain = if idx == 0 {
                Some(TimeUs::ZERO)
            } else {
                self.f_end[idx - 1][j].map(|t| t + self.profile.t_comm)
            };
            if let Some(chain) = chain {
                let start = chain.max(a.cursor);
                return Some((idx, Candidate { start, kind: PassKind::F, mb: j as u32 + 1 }));
            }
        }
        None
    }

    fn emit(&mut self, idx: usize, c: Candidate) {
        let i = idx as u32 + 1;
        let a = &mut self.agents[idx];
        debug_assert!(c.start >= a.cursor, "emission cannot predate the stage cursor");
        // Idle before a stage's first pass is the pipeline ramp, not bubble:
        // cost is measured per stage from its first start to its last end.
        if !a.seq.is_empty() {
            a.cum_bubble += c.start - a.cursor;
        }
        a.cursor = c.start + self.profile.duration(c.kind);
        a.level += self.mem.delta(c.kind);
        debug_assert!(a.level <= self.limit, "stage {i} exceeds the memory limit");
        a.seq.push(PassRef::new(i, c.mb, c.kind, 1));
        self.log.push((i, c.kind));
        let mb = c.mb as usize - 1;
        match c.kind {
            PassKind::F => {
                a.f_done += 1;
                a.next_main = PassKind::B;
                self.f_end[idx][mb] = Some(a.cursor);
            }
            PassKind::B => {
                a.b_done += 1;
                a.next_main = PassKind::F;
                a.pending_w.push_back(c.mb);
                self.b_end[idx][mb] = Some(a.cursor);
            }
            PassKind::W => {
                let front = a.pending_w.pop_front();
                debug_assert_eq!(front, Some(c.mb), "weight passes drain in backward order");
            }
        }
    }

    fn run(mut self) -> (Schedule, Vec<(u32, PassKind)>) {
        let total = self.p * 3 * self.m as usize;
        for _ in 0..total {
            let mut best: Option<(usize, Candidate)> = None;
            for idx in 0..self.p {
                if let Some(c) = self.decide(idx) {
                    if best.map_or(true, |(_, b)| c.start < b.start) {
                        best = Some((idx, c));
                    }
                }
            }
            let (idx, c) = best
                .or_else(|| self.fallback())
                .expect("schedule search stalled: no stage can act");
            self.emit(idx, c);
        }
        let schedule = Schedule {
            topology: Topology::linear(self.p as u32, self.m),
            per_stage_order: self.agents.into_iter().map(|a| a.seq).collect(),
            fused_bw: false,
        };
        (schedule, self.log)
    }
}

pub(crate) fn heuristic_schedule_logged(
    input: &SearchInput,
    params: HeuristicParams,
) -> Result<(Schedule, Vec<(u32, PassKind)>), AutoschedError> {
    let limit = input.validated_limit()?;
    let (schedule, log) = Builder::new(input, params, limit).run();
    debug_assert!(schedule.ensure_valid().is_ok());
    Ok((schedule, log))
}

/// Builds one schedule for a fixed hyperparameter setting.
pub fn heuristic_schedule(
    input: &SearchInput,
    params: HeuristicParams,
) -> Result<Schedule, AutoschedError> {
    heuristic_schedule_logged(input, params).map(|(schedule, _)| schedule)
}

/// Runs all four hyperparameter settings and returns the best schedule.
///
/// Ranking: minimal simulated cost, then lower peak memory, then the
/// lexicographically first parameter pair — fully deterministic.
pub fn grid_search(input: &SearchInput) -> Result<(Schedule, HeuristicParams), AutoschedError> {
    let mut best: Option<(TimeUs, i64, Schedule, HeuristicParams)> = None;
    for params in HeuristicParams::GRID {
        let schedule = heuristic_schedule(input, params)?;
        let run = simulate(&schedule, &input.profile).expect("search output must simulate");
        let peak = memory_trace(&run, &input.memory).peak;
        let better = match &best {
            None => true,
            Some((cost, best_peak, _, _)) => {
                run.cost < *cost || (run.cost == *cost && peak < *best_peak)
            }
        };
        if better {
            best = Some((run.cost, peak, schedule, params));
        }
    }
    let (_, _, schedule, params) = best.expect("grid is never empty");
    Ok((schedule, params))
}

/// One point of a [`memory_sweep`] result.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub m_limit: i64,
    pub bubble_rate: f64,
}

/// Evaluates the search across ascending memory limits.
///
/// A schedule found under a smaller limit stays feasible under a larger
/// one, so the best result is carried forward; the reported bubble rates
/// are therefore non-increasing.
pub fn memory_sweep(
    input: &SearchInput,
    limits: &[i64],
) -> Result<Vec<SweepPoint>, AutoschedError> {
    debug_assert!(limits.windows(2).all(|w| w[0] <= w[1]), "limits must ascend");
    let mut points = Vec::with_capacity(limits.len());
    let mut carried: Option<(TimeUs, f64)> = None;
    for &limit in limits {
        let scoped = SearchInput {
            memory: MemoryModel { m_limit: Some(limit), ..input.memory },
            ..*input
        };
        let (schedule, _) = grid_search(&scoped)?;
        let run = simulate(&schedule, &input.profile).expect("search output must simulate");
        let best = match carried {
            Some((cost, rate)) if cost <= run.cost => (cost, rate),
            _ => (run.cost, run.bubble_rate),
        };
        carried = Some(best);
        points.push(SweepPoint { m_limit: limit, bubble_rate: best.1 });
    }
    Ok(points)
}

/// Closed-form analysis of the warm-up/memory trade-off.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct WarmupBounds {
    /// Warm-up forward count beyond which the pre-B bubble stops shrinking.
    pub k_star: i64,
    /// Residual bubble before the first B at `k_star` (always below `T_F`).
    pub beta_min: TimeUs,
    /// Memory limit where the bubble-rate curve plateaus: `k_star · M_B`.
    pub m_limit_plateau: i64,
    /// Memory limit sufficient for a fully bubble-free head of pipeline.
    pub m_limit_zero: i64,
}

/// The first stage's bubble before its first backward is at least
/// `(p−1)(T_B+2·T_comm) + (p−k)·T_F` when k forwards fit in memory; this
/// evaluates the resulting thresholds.
pub fn warmup_bound_analysis(input: &SearchInput) -> Result<WarmupBounds, AutoschedError> {
    if input.stages == 0 || input.microbatches == 0 {
        return Err(AutoschedError::EmptyPipeline);
    }
    if input.profile.t_f <= TimeUs::ZERO {
        return Err(AutoschedError::ZeroForwardTime);
    }
    let p = input.stages as i64;
    let t_f = input.profile.t_f.as_us();
    let chain = (p - 1) * (input.profile.t_b.as_us() + 2 * input.profile.t_comm.as_us());
    let k_star = (chain + p * t_f) / t_f;
    let beta_min = TimeUs(chain + (p - k_star) * t_f);
    let m_limit_zero = ((chain + (2 * p - 1) * t_f) / t_f) * input.memory.m_b;
    Ok(WarmupBounds {
        k_star,
        beta_min,
        m_limit_plateau: k_star * input.memory.m_b,
        m_limit_zero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::validate_schedule;
    use crate::handcrafted::build_zb_h1;

    fn unit_input(p: u32, m: u32, limit_in_mb: i64) -> SearchInput {
        SearchInput::new(
            p,
            m,
            Profile::new(TimeUs(1000), TimeUs(1000), TimeUs(1000), TimeUs::ZERO),
            MemoryModel::new(2, 1, Some(2 * limit_in_mb)),
        )
    }

    #[test]
    fn generous_memory_reaches_zero_bubble() {
        for p in [2u32, 3, 4, 5] {
            for m in [2 * p, 3 * p] {
                let input = unit_input(p, m, 2 * p as i64);
                let (schedule, _) = grid_search(&input).unwrap();
                assert!(validate_schedule(&schedule).is_ok());
                let run = simulate(&schedule, &input.profile).unwrap();
                assert_eq!(run.bubble, TimeUs::ZERO, "p={p} m={m}: {:?}", run.bubble);
            }
        }
    }

    #[test]
    fn pinched_memory_matches_or_beats_the_one_mb_baseline() {
        for p in [2u32, 3, 4, 6] {
            let m = 3 * p;
            let input = unit_input(p, m, p as i64);
            let (schedule, _) = grid_search(&input).unwrap();
            let run = simulate(&schedule, &input.profile).unwrap();
            // (p−1)(T_F+T_B−T_W) is the handcrafted same-memory bound.
            let bound = TimeUs(1000) * (p as i64 - 1);
            assert!(
                run.bubble <= bound,
                "p={p}: bubble {:?} exceeds the same-memory baseline {:?}",
                run.bubble,
                bound
            );
            let baseline = simulate(&build_zb_h1(p, m).unwrap(), &input.profile).unwrap();
            assert!(run.cost <= baseline.cost, "heuristic lost to its baseline at p={p}");
            let trace = memory_trace(&run, &input.memory);
            assert!(trace.within_limit, "p={p}: memory limit violated");
        }
    }

    #[test]
    fn stages_keep_a_forward_lead_over_their_successor() {
        // The stay-ahead rule is a planning discipline: whenever a stage
        // plans a forward, its predecessor must already hold one more
        // (unless the predecessor has planned all of them). Verified on
        // the construction log across several shapes and limits.
        for (p, m, limit_in_mb) in [(4u32, 8u32, 8i64), (3, 9, 3), (5, 11, 10), (2, 4, 2)] {
            let input = unit_input(p, m, limit_in_mb);
            for params in HeuristicParams::GRID {
                let (_, log) = heuristic_schedule_logged(&input, params).unwrap();
                let mut counts = vec![0u32; p as usize];
                for (stage, kind) in log {
                    if kind != PassKind::F {
                        continue;
                    }
                    let idx = stage as usize - 1;
                    counts[idx] += 1;
                    if idx > 0 {
                        assert!(
                            counts[idx - 1] == m || counts[idx - 1] > counts[idx],
                            "{params:?} p={p} m={m}: stage {stage} planned F #{} \
                             while stage {} held only {}",
                            counts[idx],
                            stage - 1,
                            counts[idx - 1]
                        );
                    }
                }
                assert!(counts.iter().all(|&c| c == m), "every forward is planned");
            }
        }
    }

    #[test]
    fn grid_search_returns_the_minimum_of_the_four_runs() {
        let input = unit_input(3, 7, 4);
        let (best, _) = grid_search(&input).unwrap();
        let best_cost = simulate(&best, &input.profile).unwrap().cost;
        for params in HeuristicParams::GRID {
            let s = heuristic_schedule(&input, params).unwrap();
            let cost = simulate(&s, &input.profile).unwrap().cost;
            assert!(best_cost <= cost, "{params:?} beat the grid winner");
        }
    }

    #[test]
    fn sweep_rates_never_increase() {
        let input = unit_input(4, 12, 2 * 4);
        let limits: Vec<i64> = (4..=24).map(|k| 2 * k).collect();
        let points = memory_sweep(&input, &limits).unwrap();
        assert_eq!(points.len(), limits.len());
        for pair in points.windows(2) {
            assert!(
                pair[1].bubble_rate <= pair[0].bubble_rate + 1e-12,
                "rate rose from {:?} to {:?}",
                pair[0],
                pair[1]
            );
        }
        assert_eq!(points.last().unwrap().bubble_rate, 0.0, "3p·M_B should suffice for zero");
    }

    #[test]
    fn warmup_bounds_match_direct_evaluation() {
        let input = unit_input(4, 8, 8);
        let bounds = warmup_bound_analysis(&input).unwrap();
        // (p−1)(T_B+2t_comm)+p·T_F over T_F = (3·1000 + 4·1000)/1000.
        assert_eq!(bounds.k_star, 7);
        assert_eq!(bounds.beta_min, TimeUs::ZERO);
        assert_eq!(bounds.m_limit_plateau, 7 * 2);
        assert_eq!(bounds.m_limit_zero, 10 * 2);
        let zero_f = SearchInput {
            profile: Profile::new(TimeUs::ZERO, TimeUs(1), TimeUs(1), TimeUs::ZERO),
            ..input
        };
        assert_eq!(warmup_bound_analysis(&zero_f), Err(AutoschedError::ZeroForwardTime));
    }

    #[test]
    fn infeasible_limits_are_rejected() {
        let mut input = unit_input(2, 2, 1);
        input.memory.m_limit = Some(1);
        assert!(matches!(
            heuristic_schedule(&input, HeuristicParams::default()),
            Err(AutoschedError::InfeasibleMemoryLimit { .. })
        ));
        input.memory.m_limit = None;
        assert_eq!(
            heuristic_schedule(&input, HeuristicParams::default()).unwrap_err(),
            AutoschedError::MissingMemoryLimit
        );
    }
}
