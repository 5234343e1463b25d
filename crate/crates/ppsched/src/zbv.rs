//! The V-schedule: two chunks per worker placed so the model runs down the
//! pipeline and folds back up (worker i hosts positions i and 2p+1−i). Both
//! the forward and backward chains then start *and* end on worker 1, which
//! lets every worker reach its backward work early enough to hit zero bubble
//! under equal pass times — inside the same activation budget as 1F1B.
//!
//! Construction runs in three phases per worker: a fixed warm-up (2p−i
//! first-chunk + i−1 second-chunk forwards), a steady state of F-B-W groups
//! alternating between the chunks, and a drain that schedules the remaining
//! backwards (lowest microbatch first) with weight passes filling gaps. The
//! steady/drain boundary is where the fixed pattern would starve: once a
//! worker exhausts one chunk's forwards, the leftovers join the drain policy.

use std::collections::VecDeque;
use std::ops::RangeInclusive;

use thiserror::Error;

use crate::core::{MemoryModel, PassKind, PassRef, Profile, Schedule, TimeUs, Topology};
use crate::sim::{memory_trace, simulate};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ZbvError {
    #[error("p and m must both be at least 1")]
    EmptyPipeline,
    #[error("{layers} layers cannot be split evenly into {chunks} V-chunks")]
    LayersNotDivisible { layers: u32, chunks: u32 },
}

/// True when (p, m) supports the full three-phase pattern and therefore the
/// zero-bubble certificate; below this the builder is best-effort.
pub fn supports_zero_bubble(p: u32, m: u32) -> bool {
    m >= 2 * p - 1
}

/// Contiguous layer ranges per worker, `[first-chunk, second-chunk]`.
///
/// The layer count must divide evenly into 2p chunks; worker 1 gets the very
/// first and very last slice (e.g. 16 layers across 4 workers: layers 1-2
/// and 15-16), mirroring the V placement.
pub fn layer_assignment(
    p: u32,
    layers: u32,
) -> Result<Vec<[RangeInclusive<u32>; 2]>, ZbvError> {
    if p == 0 {
        return Err(ZbvError::EmptyPipeline);
    }
    let chunks = 2 * p;
    if layers == 0 || layers % chunks != 0 {
        return Err(ZbvError::LayersNotDivisible { layers, chunks });
    }
    let size = layers / chunks;
    let slice = |g: u32| (g - 1) * size + 1..=g * size;
    Ok((1..=p).map(|i| [slice(i), slice(2 * p + 1 - i)]).collect())
}

// ── Construction internals ──────────────────────────────────────────────

/// End times of emitted passes, indexed by (global position, microbatch).
struct ChainTimes {
    microbatches: usize,
    end: [Vec<Option<TimeUs>>; 3],
}

impl ChainTimes {
    fn new(positions: usize, microbatches: usize) -> ChainTimes {
        let empty = vec![None; positions * microbatches];
        ChainTimes { microbatches, end: [empty.clone(), empty.clone(), empty] }
    }

    fn slot(kind: PassKind) -> usize {
        match kind {
            PassKind::F => 0,
            PassKind::B => 1,
            PassKind::W => 2,
        }
    }

    fn idx(&self, position: u32, mb: u32) -> usize {
        (position as usize - 1) * self.microbatches + (mb as usize - 1)
    }

    fn set(&mut self, kind: PassKind, position: u32, mb: u32, end: TimeUs) {
        let idx = self.idx(position, mb);
        self.end[Self::slot(kind)][idx] = Some(end);
    }

    fn get(&self, kind: PassKind, position: u32, mb: u32) -> Option<TimeUs> {
        self.end[Self::slot(kind)][self.idx(position, mb)]
    }
}

#[derive(Copy, Clone, Debug)]
struct Planned {
    kind: PassKind,
    chunk: u8, // 0 = first chunk (descending leg), 1 = second (ascending)
    mb: u32,
}

#[derive(PartialEq)]
enum Phase {
    Structural,
    Drain,
}

struct VWorker {
    stage: u32,
    cursor: TimeUs,
    seq: Vec<PassRef>,
    queue: VecDeque<Planned>,
    phase: Phase,
    f_next: [u32; 2],
    b_next: [u32; 2],
    f_emitted: u32,
    w_emitted: u32,
    pending_w: VecDeque<(u8, u32)>,
    initial_groups_left: u32,
    alternate_chunk: u8,
}

impl VWorker {
    fn new(p: u32, m: u32, stage: u32) -> VWorker {
        let mut worker = VWorker {
            stage,
            cursor: TimeUs::ZERO,
            seq: Vec::with_capacity(6 * m as usize),
            queue: VecDeque::new(),
            phase: Phase::Structural,
            f_next: [1, 1],
            b_next: [1, 1],
            f_emitted: 0,
            w_emitted: 0,
            pending_w: VecDeque::new(),
            initial_groups_left: p - stage,
            alternate_chunk: 1, // alternation starts on the second chunk
        };
        // Warm-up: 2p−2i+1 first-chunk forwards, then second/first pairs
        // up to the quoted totals (2p−i first, i−1 second), clamped to m.
        let plan_f = |worker: &mut VWorker, chunk: u8| {
            let mb = worker.f_next[chunk as usize];
            if mb <= m {
                worker.queue.push_back(Planned { kind: PassKind::F, chunk, mb });
                worker.f_next[chunk as usize] += 1;
            }
        };
        for _ in 0..(2 * (p - stage) + 1) {
            plan_f(&mut worker, 0);
        }
        for _ in 0..(stage - 1) {
            plan_f(&mut worker, 1);
            plan_f(&mut worker, 0);
        }
        worker
    }

    fn done(&self, m: u32) -> bool {
        self.seq.len() == 6 * m as usize
    }

    /// Refills the structural queue with the next steady-state F-B-W group,
    /// or falls through to the drain phase once either chunk is out of
    /// forwards.
    fn plan_group(&mut self, m: u32) {
        if self.phase == Phase::Drain || !self.queue.is_empty() {
            return;
        }
        if self.f_next[0] > m || self.f_next[1] > m {
            self.phase = Phase::Drain;
            return;
        }
        let chunk = if self.initial_groups_left > 0 {
            self.initial_groups_left -= 1;
            1
        } else {
            let c = self.alternate_chunk;
            self.alternate_chunk = 1 - c;
            c
        };
        let f_mb = self.f_next[chunk as usize];
        let b_mb = self.b_next[chunk as usize];
        debug_assert!(b_mb <= m, "steady B index outruns the microbatch count");
        self.f_next[chunk as usize] += 1;
        self.b_next[chunk as usize] += 1;
        self.queue.push_back(Planned { kind: PassKind::F, chunk, mb: f_mb });
        self.queue.push_back(Planned { kind: PassKind::B, chunk, mb: b_mb });
        self.queue.push_back(Planned { kind: PassKind::W, chunk, mb: b_mb });
    }
}

/// Global chunk position of a worker's chunk (0 = descending, 1 = ascending).
fn position(p: u32, stage: u32, chunk: u8) -> u32 {
    if chunk == 0 {
        stage
    } else {
        2 * p + 1 - stage
    }
}

/// Builds the V-schedule for p workers and m microbatches.
///
/// The pass order is synthesized against unit pass times (where the layout
/// is provably bubble-free for m ≥ 2p−1); [`shift_w_tail`] re-places the
/// weight passes for a concrete profile afterwards. For m < 2p−1 the pattern
/// is clamped and the drain policy schedules whatever remains (best effort).
pub fn build_zbv(p: u32, m: u32) -> Result<Schedule, ZbvError> {
    if p == 0 || m == 0 {
        return Err(ZbvError::EmptyPipeline);
    }
    let positions = 2 * p;
    let mut times = ChainTimes::new(positions as usize, m as usize);
    let mut workers: Vec<VWorker> = (1..=p).map(|i| VWorker::new(p, m, i)).collect();
    let one = TimeUs(1); // synthesis clock: unit durations, free communication

    let f_ready = |times: &ChainTimes, g: u32, mb: u32| -> Option<TimeUs> {
        if g == 1 {
            Some(TimeUs::ZERO)
        } else {
            times.get(PassKind::F, g - 1, mb)
        }
    };
    let b_ready = |times: &ChainTimes, g: u32, mb: u32| -> Option<TimeUs> {
        let local = times.get(PassKind::F, g, mb)?;
        if g == positions {
            Some(local)
        } else {
            Some(local.max(times.get(PassKind::B, g + 1, mb)?))
        }
    };

    // Candidate next emission for one worker: (start, plan, from_queue).
    let peek = |worker: &VWorker, times: &ChainTimes| -> Option<(TimeUs, Planned)> {
        if let Some(&head) = worker.queue.front() {
            let g = position(p, worker.stage, head.chunk);
            let ready = match head.kind {
                PassKind::F => f_ready(times, g, head.mb),
                PassKind::B => b_ready(times, g, head.mb),
                PassKind::W => times.get(PassKind::B, g, head.mb),
            }?;
            return Some((ready.max(worker.cursor), head));
        }
        // Drain policy: a ready forward keeps downstream workers fed, then
        // ready backwards lowest-microbatch-first (ascending leg before
        // descending for equal microbatches), and weight passes fill gaps.
        //
        // When the in-flight cap is saturated and forwards remain, a weight
        // pass must run before the next forward can charge; emitting it now
        // instead of a backward keeps the forward chain on schedule.
        let fs_remain = worker.f_next[0] <= m || worker.f_next[1] <= m;
        if fs_remain && worker.f_emitted - worker.w_emitted >= 2 * p {
            if let Some(&(chunk, mb)) = worker.pending_w.front() {
                return Some((worker.cursor, Planned { kind: PassKind::W, chunk, mb }));
            }
        }
        let mut best_f: Option<(TimeUs, Planned)> = None;
        for chunk in [0u8, 1] {
            let mb = worker.f_next[chunk as usize];
            // In-flight cap keeps the drain inside the p·M_B envelope.
            if mb > m || worker.f_emitted - worker.w_emitted >= 2 * p {
                continue;
            }
            if let Some(ready) = f_ready(times, position(p, worker.stage, chunk), mb) {
                let start = ready.max(worker.cursor);
                if best_f.map_or(true, |(s, _)| start < s) {
                    best_f = Some((start, Planned { kind: PassKind::F, chunk, mb }));
                }
            }
        }
        let mut best_b: Option<(TimeUs, Planned)> = None;
        for chunk in [1u8, 0] {
            let mb = worker.b_next[chunk as usize];
            if mb > m || mb >= worker.f_next[chunk as usize] {
                continue;
            }
            let key = (mb, chunk == 0);
            let better = match best_b {
                None => true,
                Some((_, plan)) => key < (plan.mb, plan.chunk == 0),
            };
            if better {
                if let Some(ready) = b_ready(times, position(p, worker.stage, chunk), mb) {
                    best_b = Some((ready.max(worker.cursor), Planned { kind: PassKind::B, chunk, mb }));
                }
            }
        }
        // An immediately runnable forward outranks an immediately runnable
        // backward: it is what keeps the other leg of the V supplied.
        if best_f.is_some_and(|(start, _)| start <= worker.cursor) {
            return best_f;
        }
        if best_b.is_some_and(|(start, _)| start <= worker.cursor) {
            return best_b;
        }
        let known = match (best_f, best_b) {
            (Some(f), Some(b)) => Some(if f.0 <= b.0 { f } else { b }),
            (f, b) => f.or(b),
        };
        if let Some(&(chunk, mb)) = worker.pending_w.front() {
            let fits = match known {
                None => true,
                Some((start, _)) => worker.cursor + one <= start,
            };
            if fits {
                return Some((worker.cursor, Planned { kind: PassKind::W, chunk, mb }));
            }
        }
        known
    };

    let total = (6 * m * p) as usize;
    let mut emitted = 0usize;
    while emitted < total {
        for w in workers.iter_mut() {
            w.plan_group(m);
        }
        let mut choice: Option<(TimeUs, usize, Planned)> = None;
        for (idx, worker) in workers.iter().enumerate() {
            if worker.done(m) {
                continue;
            }
            if let Some((start, plan)) = peek(worker, &times) {
                if choice.map_or(true, |(s, _, _)| start < s) {
                    choice = Some((start, idx, plan));
                }
            }
        }
        let (start, idx, plan) = choice.expect("V-construction stalled: dependency hole");
        let worker = &mut workers[idx];
        let g = position(p, worker.stage, plan.chunk);
        let end = start + one;
        times.set(plan.kind, g, plan.mb, end);
        worker.cursor = end;
        worker.seq.push(PassRef::new(worker.stage, plan.mb, plan.kind, plan.chunk as u32 + 1));
        let from_queue = worker.queue.front().is_some();
        if from_queue {
            worker.queue.pop_front();
        }
        match plan.kind {
            PassKind::F => {
                worker.f_emitted += 1;
                if !from_queue {
                    worker.f_next[plan.chunk as usize] += 1;
                }
            }
            PassKind::B => {
                if !from_queue {
                    worker.b_next[plan.chunk as usize] += 1;
                    worker.pending_w.push_back((plan.chunk, plan.mb));
                }
            }
            PassKind::W => {
                worker.w_emitted += 1;
                if !from_queue {
                    worker.pending_w.pop_front();
                }
            }
        }
        emitted += 1;
    }

    let schedule = Schedule {
        topology: Topology::vee(p, m),
        per_stage_order: workers.into_iter().map(|w| w.seq).collect(),
        fused_bw: false,
    };
    debug_assert!(schedule.ensure_valid().is_ok());
    Ok(schedule)
}

// ── W re-placement ──────────────────────────────────────────────────────

/// Re-places every stage's W passes while keeping its F/B skeleton fixed:
/// a pending W runs when memory forces it (the next forward would blow the
/// limit), when it fits a dependency gap of at least `threshold`, or in the
/// final drain. Returns `None` if the skeleton deadlocks (cannot happen for
/// schedules this crate builds; a defensive fallback for foreign inputs).
fn replace_ws(
    schedule: &Schedule,
    profile: &Profile,
    mem: &MemoryModel,
    threshold: TimeUs,
) -> Option<Schedule> {
    let topo = &schedule.topology;
    let positions = topo.positions();
    let mut times = ChainTimes::new(positions as usize, topo.microbatches as usize);
    let hop = |from_pos: u32, to_pos: u32| {
        if topo.slot(from_pos).stage == topo.slot(to_pos).stage {
            TimeUs::ZERO
        } else {
            profile.t_comm
        }
    };

    struct StageState {
        cursor: TimeUs,
        level: i64,
        skeleton: Vec<PassRef>,
        si: usize,
        pending: VecDeque<PassRef>,
        seq: Vec<PassRef>,
    }
    let mut stages: Vec<StageState> = schedule
        .per_stage_order
        .iter()
        .map(|order| StageState {
            cursor: TimeUs::ZERO,
            level: 0,
            skeleton: order.iter().filter(|pass| pass.kind != PassKind::W).copied().collect(),
            si: 0,
            pending: VecDeque::new(),
            seq: Vec::with_capacity(order.len()),
        })
        .collect();

    let total: usize = schedule.per_stage_order.iter().map(Vec::len).sum();
    let mut emitted = 0usize;
    while emitted < total {
        // (start, stage index, pass) of the best next emission.
        let mut choice: Option<(TimeUs, usize, PassRef)> = None;
        for (idx, st) in stages.iter().enumerate() {
            let next = st.skeleton.get(st.si).copied();
            let candidate: Option<(TimeUs, PassRef)> = match next {
                Some(pass) => {
                    let g = topo
                        .position_of(pass.stage, pass.chunk)
                        .expect("validated schedule has placed chunks");
                    let ready = match pass.kind {
                        PassKind::F => {
                            if g == 1 {
                                Some(TimeUs::ZERO)
                            } else {
                                times.get(PassKind::F, g - 1, pass.microbatch).map(|t| t + hop(g - 1, g))
                            }
                        }
                        PassKind::B => {
                            let local = times.get(PassKind::F, g, pass.microbatch);
                            let chain = if g == positions {
                                local
                            } else {
                                let anchor =
                                    if schedule.fused_bw { PassKind::W } else { PassKind::B };
                                match (local, times.get(anchor, g + 1, pass.microbatch)) {
                                    (Some(a), Some(b)) => Some(a.max(b + hop(g + 1, g))),
                                    _ => None,
                                }
                            };
                            chain
                        }
                        PassKind::W => unreachable!("skeleton holds no W"),
                    };
                    let memory_blocked = pass.kind == PassKind::F
                        && mem.m_limit.is_some_and(|limit| st.level + mem.m_b > limit);
                    if memory_blocked {
                        // A weight pass must run first to free the budget.
                        st.pending.front().map(|&w| (st.cursor, w))
                    } else {
                        match ready {
                            Some(r) => {
                                let start = r.max(st.cursor);
                                if start > st.cursor {
                                    if let Some(&w) = st.pending.front() {
                                        if st.cursor + threshold <= start {
                                            Some((st.cursor, w))
                                        } else {
                                            Some((start, pass))
                                        }
                                    } else {
                                        Some((start, pass))
                                    }
                                } else {
                                    Some((start, pass))
                                }
                            }
                            None => st.pending.front().map(|&w| (st.cursor, w)),
                        }
                    }
                }
                // Skeleton exhausted: drain the weight backlog.
                None => st.pending.front().map(|&w| (st.cursor, w)),
            };
            if let Some((start, pass)) = candidate {
                if choice.map_or(true, |(s, _, _)| start < s) {
                    choice = Some((start, idx, pass));
                }
            }
        }
        let (start, idx, pass) = choice?;
        let st = &mut stages[idx];
        let end = start + profile.duration(pass.kind);
        let g = topo.position_of(pass.stage, pass.chunk).expect("placed");
        times.set(pass.kind, g, pass.microbatch, end);
        st.cursor = end;
        st.seq.push(pass);
        match pass.kind {
            PassKind::F => {
                st.level += mem.m_b;
                st.si += 1;
            }
            PassKind::B => {
                st.level += mem.m_w - mem.m_b;
                st.si += 1;
                st.pending.push_back(PassRef::new(pass.stage, pass.microbatch, PassKind::W, pass.chunk));
            }
            PassKind::W => {
                st.level -= mem.m_w;
                st.pending.pop_front();
            }
        }
        emitted += 1;
    }

    Some(Schedule {
        topology: topo.clone(),
        per_stage_order: stages.into_iter().map(|s| s.seq).collect(),
        fused_bw: schedule.fused_bw,
    })
}

/// Shifts weight passes rightward so they fill tail bubbles left when
/// `T_W` undercuts the other pass times, without violating the memory limit.
///
/// Tries two gap thresholds (a W must fully fit, or any positive gap gets
/// one) and keeps whichever simulates best; the input schedule itself stays
/// in the race, so the returned cost never exceeds the input's. Ties keep
/// the input unchanged.
pub fn shift_w_tail(schedule: &Schedule, mem: &MemoryModel, profile: &Profile) -> Schedule {
    let score = |s: &Schedule| {
        let run = simulate(s, profile).ok()?;
        let trace = memory_trace(&run, mem);
        Some((run.cost, trace.peak, trace.within_limit))
    };
    let Some((base_cost, base_peak, base_within)) = score(schedule) else {
        return schedule.clone();
    };
    let mut best = (base_cost, base_peak, schedule.clone());
    let thresholds = [profile.t_w.max(TimeUs(1)), TimeUs(1)];
    for threshold in thresholds {
        let Some(candidate) = replace_ws(schedule, profile, mem, threshold) else {
            continue;
        };
        let Some((cost, peak, within)) = score(&candidate) else {
            continue;
        };
        if base_within && !within {
            continue;
        }
        if cost < best.0 || (cost == best.0 && peak < best.1) {
            best = (cost, peak, candidate);
        }
    }
    best.2
}
