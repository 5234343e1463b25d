//! Self-contained branch-and-bound search over per-stage pass orderings.
//!
//! A complete assignment of each stage's execution order determines the whole
//! timeline under list scheduling (every pass starts as soon as its stage and
//! inputs allow), so the search space is the product of per-stage
//! interleavings — within one stage each kind is committed in microbatch
//! order, which loses nothing because same-kind passes on a stage are
//! interchangeable. The search extends a partial timeline one pass at a time,
//! prunes on an incumbent bound, and memoizes Pareto-minimal frontiers per
//! progress vector: two partial schedules with the same per-stage counters
//! are comparable, and the one with componentwise earlier cursors/chain ends
//! and a later first start can only finish better.

use std::collections::HashMap;

use crate::core::{MemoryModel, PassKind, PassRef, Profile, Schedule, TimeUs, Topology};
use crate::sim::{memory_trace, simulate};

use super::IlpError;

/// Caps for [`solve_exact`]; the defaults scope the solver to oracle duty.
#[derive(Copy, Clone, Debug)]
pub struct SolveLimits {
    pub max_stages: u32,
    pub max_microbatches: u32,
    /// Abort the search after this many explored nodes; the best incumbent is
    /// returned with `proven_optimal == false`.
    pub node_budget: Option<u64>,
}

impl Default for SolveLimits {
    fn default() -> SolveLimits {
        SolveLimits { max_stages: 3, max_microbatches: 4, node_budget: None }
    }
}

/// Result of an exact search.
#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub schedule: Schedule,
    /// Largest per-stage span of the returned schedule.
    pub cost: TimeUs,
    /// True when the search tree was exhausted (no node budget hit).
    pub proven_optimal: bool,
    pub nodes_explored: u64,
}

/// Finds a cost-minimal schedule under the default oracle-size limits.
///
/// `warm_start` seeds the incumbent bound: the search then only explores
/// orderings that could strictly beat it, and returns the warm start itself
/// when nothing does. The warm start must fit the instance and its memory
/// limit.
pub fn solve_exact(
    p: u32,
    m: u32,
    profile: &Profile,
    mem: &MemoryModel,
    warm_start: Option<&Schedule>,
) -> Result<ExactSolution, IlpError> {
    solve_exact_with(p, m, profile, mem, warm_start, &SolveLimits::default())
}

/// [`solve_exact`] with explicit instance/node limits.
pub fn solve_exact_with(
    p: u32,
    m: u32,
    profile: &Profile,
    mem: &MemoryModel,
    warm_start: Option<&Schedule>,
    limits: &SolveLimits,
) -> Result<ExactSolution, IlpError> {
    assert!(p >= 1 && m >= 1, "search needs at least one stage and microbatch");
    if p > limits.max_stages || m > limits.max_microbatches {
        return Err(IlpError::InstanceTooLarge {
            p,
            m,
            max_stages: limits.max_stages,
            max_microbatches: limits.max_microbatches,
        });
    }
    if let Some(limit) = mem.m_limit {
        let needed = mem.m_b.max(mem.m_w);
        if limit < needed {
            return Err(IlpError::InfeasibleMemoryLimit { limit, needed });
        }
    }
    let mut warm_cost = None;
    if let Some(w) = warm_start {
        let topo = &w.topology;
        if topo.stages != p || topo.microbatches != m || topo.chunks_per_stage != 1 || w.fused_bw {
            return Err(IlpError::ScheduleMismatch(format!(
                "warm start is p={}, m={}, chunks={}, fused={}; search instance is p={p}, m={m}",
                topo.stages, topo.microbatches, topo.chunks_per_stage, w.fused_bw
            )));
        }
        let run = simulate(w, profile).map_err(|e| IlpError::ScheduleMismatch(e.to_string()))?;
        if !memory_trace(&run, mem).within_limit {
            return Err(IlpError::ScheduleMismatch(
                "warm start exceeds the memory limit; its cost cannot bound the search".to_string(),
            ));
        }
        warm_cost = Some(run.cost.as_us());
    }

    let mut search = Search::new(p as usize, m as usize, profile, mem, limits.node_budget);
    if let Some(c) = warm_cost {
        search.best_cost = c;
    }
    search.dfs();

    let seq = match search.best.take() {
        Some(seq) => seq,
        None => {
            // Nothing beat the warm start; it is itself optimal (or the
            // instance is memory-infeasible when there is no warm start).
            return match warm_start {
                Some(w) => Ok(ExactSolution {
                    schedule: w.clone(),
                    cost: TimeUs(warm_cost.expect("warm cost recorded")),
                    proven_optimal: !search.budget_hit,
                    nodes_explored: search.nodes,
                }),
                None => Err(IlpError::Infeasible),
            };
        }
    };
    let per_stage_order = seq
        .into_iter()
        .enumerate()
        .map(|(s, row)| {
            row.into_iter()
                .map(|(kind, mb)| PassRef::new(s as u32 + 1, mb, kind, 1))
                .collect()
        })
        .collect();
    let schedule =
        Schedule { topology: Topology::linear(p, m), per_stage_order, fused_bw: false };
    debug_assert_eq!(
        simulate(&schedule, profile).map(|r| r.cost.as_us()).ok(),
        Some(search.best_cost),
        "reconstructed schedule must replay to the best cost found"
    );
    Ok(ExactSolution {
        schedule,
        cost: TimeUs(search.best_cost),
        proven_optimal: !search.budget_hit,
        nodes_explored: search.nodes,
    })
}

#[derive(Copy, Clone)]
struct Move {
    stage: usize,
    kind: PassKind,
    start: i64,
}

struct Undo {
    stage: usize,
    kind: PassKind,
    prev_cursor: i64,
    started_here: bool,
}

struct Search {
    p: usize,
    m: usize,
    tf: i64,
    tb: i64,
    tw: i64,
    tc: i64,
    m_b: i64,
    m_w: i64,
    limit: Option<i64>,
    f_done: Vec<usize>,
    b_done: Vec<usize>,
    w_done: Vec<usize>,
    level: Vec<i64>,
    cursor: Vec<i64>,
    /// Start of each stage's first pass; -1 while the stage is idle-fresh.
    first_start: Vec<i64>,
    f_end: Vec<i64>,
    b_end: Vec<i64>,
    seq: Vec<Vec<(PassKind, u32)>>,
    best_cost: i64,
    best: Option<Vec<Vec<(PassKind, u32)>>>,
    nodes: u64,
    budget: Option<u64>,
    budget_hit: bool,
    /// Progress vector → Pareto-minimal state frontiers seen at it.
    memo: HashMap<Vec<u8>, Vec<Vec<i64>>>,
}

impl Search {
    fn new(p: usize, m: usize, profile: &Profile, mem: &MemoryModel, budget: Option<u64>) -> Search {
        Search {
            p,
            m,
            tf: profile.t_f.as_us(),
            tb: profile.t_b.as_us(),
            tw: profile.t_w.as_us(),
            tc: profile.t_comm.as_us(),
            m_b: mem.m_b,
            m_w: mem.m_w,
            limit: mem.m_limit,
            f_done: vec![0; p],
            b_done: vec![0; p],
            w_done: vec![0; p],
            level: vec![0; p],
            cursor: vec![0; p],
            first_start: vec![-1; p],
            f_end: vec![0; p * m],
            b_end: vec![0; p * m],
            seq: vec![Vec::with_capacity(3 * m); p],
            best_cost: i64::MAX,
            best: None,
            nodes: 0,
            budget,
            budget_hit: false,
            memo: HashMap::new(),
        }
    }

    fn duration(&self, kind: PassKind) -> i64 {
        match kind {
            PassKind::F => self.tf,
            PassKind::B => self.tb,
            PassKind::W => self.tw,
        }
    }

    fn delta(&self, kind: PassKind) -> i64 {
        match kind {
            PassKind::F => self.m_b,
            PassKind::B => self.m_w - self.m_b,
            PassKind::W => -self.m_w,
        }
    }

    fn fits(&self, stage: usize, kind: PassKind) -> bool {
        match self.limit {
            Some(limit) => self.level[stage] + self.delta(kind) <= limit,
            None => true,
        }
    }

    fn complete(&self) -> bool {
        (0..self.p).all(|s| self.w_done[s] == self.m)
    }

    fn push_moves(&self, out: &mut Vec<Move>) {
        for s in 0..self.p {
            let j = self.f_done[s];
            if j < self.m && (s == 0 || self.f_done[s - 1] > j) && self.fits(s, PassKind::F) {
                let ready = if s == 0 { 0 } else { self.f_end[(s - 1) * self.m + j] + self.tc };
                out.push(Move { stage: s, kind: PassKind::F, start: self.cursor[s].max(ready) });
            }
            let j = self.b_done[s];
            if j < self.f_done[s]
                && (s == self.p - 1 || self.b_done[s + 1] > j)
                && self.fits(s, PassKind::B)
            {
                let ready = if s == self.p - 1 {
                    self.f_end[s * self.m + j]
                } else {
                    self.b_end[(s + 1) * self.m + j] + self.tc
                };
                out.push(Move { stage: s, kind: PassKind::B, start: self.cursor[s].max(ready) });
            }
            let j = self.w_done[s];
            if j < self.b_done[s] {
                let ready = self.b_end[s * self.m + j];
                out.push(Move { stage: s, kind: PassKind::W, start: self.cursor[s].max(ready) });
            }
        }
        // Earliest-start-first finds tight incumbents quickly; the stage and
        // kind tiebreaks only pin determinism.
        out.sort_by_key(|mv| (mv.start, mv.stage, mv.kind as u8));
    }

    fn apply(&mut self, mv: Move) -> Undo {
        let s = mv.stage;
        let end = mv.start + self.duration(mv.kind);
        let undo = Undo {
            stage: s,
            kind: mv.kind,
            prev_cursor: self.cursor[s],
            started_here: self.first_start[s] < 0,
        };
        if undo.started_here {
            self.first_start[s] = mv.start;
        }
        self.cursor[s] = end;
        self.level[s] += self.delta(mv.kind);
        let mb;
        match mv.kind {
            PassKind::F => {
                mb = self.f_done[s];
                self.f_end[s * self.m + mb] = end;
                self.f_done[s] += 1;
            }
            PassKind::B => {
                mb = self.b_done[s];
                self.b_end[s * self.m + mb] = end;
                self.b_done[s] += 1;
            }
            PassKind::W => {
                mb = self.w_done[s];
                self.w_done[s] += 1;
            }
        }
        self.seq[s].push((mv.kind, mb as u32 + 1));
        undo
    }

    fn revert(&mut self, undo: Undo) {
        let s = undo.stage;
        if undo.started_here {
            self.first_start[s] = -1;
        }
        self.cursor[s] = undo.prev_cursor;
        self.level[s] -= self.delta(undo.kind);
        match undo.kind {
            PassKind::F => self.f_done[s] -= 1,
            PassKind::B => self.b_done[s] -= 1,
            PassKind::W => self.w_done[s] -= 1,
        }
        self.seq[s].pop();
    }

    /// A stage can never finish earlier than its current span plus its
    /// remaining work run back to back.
    fn lower_bound(&self) -> i64 {
        let mut bound = self.m as i64 * (self.tf + self.tb + self.tw);
        for s in 0..self.p {
            if self.first_start[s] >= 0 {
                let remaining = (self.m - self.f_done[s]) as i64 * self.tf
                    + (self.m - self.b_done[s]) as i64 * self.tb
                    + (self.m - self.w_done[s]) as i64 * self.tw;
                bound = bound.max(self.cursor[s] - self.first_start[s] + remaining);
            }
        }
        bound
    }

    fn progress_key(&self) -> Vec<u8> {
        let mut key = Vec::with_capacity(3 * self.p);
        for s in 0..self.p {
            key.push(self.f_done[s] as u8);
            key.push(self.b_done[s] as u8);
            key.push(self.w_done[s] as u8);
        }
        key
    }

    /// Componentwise-comparable state at a fixed progress vector: cursors and
    /// live chain ends (smaller is better), first starts negated (a later
    /// first start shortens the span, so smaller negation is better).
    fn state_vec(&self) -> Vec<i64> {
        let mut v = Vec::new();
        for s in 0..self.p {
            v.push(self.cursor[s]);
            v.push(-self.first_start[s]);
        }
        for s in 0..self.p {
            // Forward ends still awaited by the next stage (or by this
            // stage's own turnaround on the last stage).
            let lo = if s + 1 < self.p { self.f_done[s + 1] } else { self.b_done[s] };
            for j in lo..self.f_done[s] {
                v.push(self.f_end[s * self.m + j]);
            }
            // Backward ends still awaited upstream or by this stage's W.
            let lo = if s == 0 {
                self.w_done[0]
            } else {
                self.b_done[s - 1].min(self.w_done[s])
            };
            for j in lo..self.b_done[s] {
                v.push(self.b_end[s * self.m + j]);
            }
        }
        v
    }

    /// True when an already-explored sibling state dominates this one.
    fn dominated_or_insert(&mut self) -> bool {
        let key = self.progress_key();
        let vec = self.state_vec();
        let entry = self.memo.entry(key).or_default();
        for stored in entry.iter() {
            if stored.iter().zip(&vec).all(|(a, b)| a <= b) {
                return true;
            }
        }
        entry.retain(|stored| !vec.iter().zip(stored.iter()).all(|(a, b)| a <= b));
        entry.push(vec);
        false
    }

    fn dfs(&mut self) {
        self.nodes += 1;
        if let Some(budget) = self.budget {
            if self.nodes > budget {
                self.budget_hit = true;
                return;
            }
        }
        if self.complete() {
            let cost = (0..self.p)
                .map(|s| self.cursor[s] - self.first_start[s])
                .max()
                .expect("at least one stage");
            if cost < self.best_cost {
                self.best_cost = cost;
                self.best = Some(self.seq.clone());
            }
            return;
        }
        if self.lower_bound() >= self.best_cost {
            return;
        }
        if self.dominated_or_insert() {
            return;
        }
        let mut moves = Vec::with_capacity(3 * self.p);
        self.push_moves(&mut moves);
        for mv in moves {
            let undo = self.apply(mv);
            self.dfs();
            self.revert(undo);
            if self.budget_hit {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::validate_schedule;

    /// Every interleaving of one stage's passes with microbatch-FIFO kinds
    /// and F before B before W per microbatch.
    fn stage_orders(m: u32) -> Vec<Vec<(PassKind, u32)>> {
        fn rec(
            m: u32,
            f: u32,
            b: u32,
            w: u32,
            cur: &mut Vec<(PassKind, u32)>,
            out: &mut Vec<Vec<(PassKind, u32)>>,
        ) {
            if w == m {
                out.push(cur.clone());
                return;
            }
            if f < m {
                cur.push((PassKind::F, f + 1));
                rec(m, f + 1, b, w, cur, out);
                cur.pop();
            }
            if b < f {
                cur.push((PassKind::B, b + 1));
                rec(m, f, b + 1, w, cur, out);
                cur.pop();
            }
            if w < b {
                cur.push((PassKind::W, w + 1));
                rec(m, f, b, w + 1, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(m, 0, 0, 0, &mut Vec::new(), &mut out);
        out
    }

    fn assemble(p: u32, m: u32, rows: &[&Vec<(PassKind, u32)>]) -> Schedule {
        let per_stage_order = rows
            .iter()
            .enumerate()
            .map(|(s, row)| {
                row.iter()
                    .map(|&(kind, mb)| PassRef::new(s as u32 + 1, mb, kind, 1))
                    .collect()
            })
            .collect();
        Schedule { topology: Topology::linear(p, m), per_stage_order, fused_bw: false }
    }

    /// Exhaustive minimum over all per-stage order combinations.
    fn brute_force(p: u32, m: u32, profile: &Profile, mem: &MemoryModel) -> Option<i64> {
        let orders = stage_orders(m);
        let mut rows: Vec<&Vec<(PassKind, u32)>> = Vec::with_capacity(p as usize);
        fn rec<'a>(
            p: u32,
            m: u32,
            profile: &Profile,
            mem: &MemoryModel,
            orders: &'a [Vec<(PassKind, u32)>],
            rows: &mut Vec<&'a Vec<(PassKind, u32)>>,
            best: &mut Option<i64>,
        ) {
            if rows.len() == p as usize {
                let schedule = assemble(p, m, rows);
                if !validate_schedule(&schedule).is_ok() {
                    return;
                }
                let run = simulate(&schedule, profile).expect("validated schedule simulates");
                if mem.m_limit.is_some() && !memory_trace(&run, mem).within_limit {
                    return;
                }
                let cost = run.cost.as_us();
                if best.map_or(true, |b| cost < b) {
                    *best = Some(cost);
                }
                return;
            }
            for row in orders {
                rows.push(row);
                rec(p, m, profile, mem, orders, rows, best);
                rows.pop();
            }
        }
        let mut best = None;
        rec(p, m, profile, mem, &orders, &mut rows, &mut best);
        best
    }

    #[test]
    fn stage_order_counts_follow_the_ballot_numbers() {
        assert_eq!(stage_orders(1).len(), 1);
        assert_eq!(stage_orders(2).len(), 5);
        assert_eq!(stage_orders(3).len(), 42);
        assert_eq!(stage_orders(4).len(), 462);
    }

    #[test]
    fn two_stages_one_microbatch_costs_five_units() {
        let profile = Profile::new(TimeUs(1), TimeUs(1), TimeUs(1), TimeUs(0));
        let mem = MemoryModel::new(1, 1, None);
        let sol = solve_exact(2, 1, &profile, &mem, None).unwrap();
        assert_eq!(sol.cost, TimeUs(5), "stage 1 spans F, the echo, B, W");
        assert!(sol.proven_optimal);
        let run = simulate(&sol.schedule, &profile).unwrap();
        assert!((run.bubble_rate - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_stage_packs_solid() {
        let profile = Profile::new(TimeUs(7), TimeUs(9), TimeUs(4), TimeUs(3));
        let mem = MemoryModel::new(1, 1, None);
        let sol = solve_exact(1, 3, &profile, &mem, None).unwrap();
        assert_eq!(sol.cost, TimeUs(3 * (7 + 9 + 4)));
        let run = simulate(&sol.schedule, &profile).unwrap();
        assert_eq!(run.bubble, TimeUs(0));
    }

    #[test]
    fn matches_brute_force_minimum() {
        let profiles = [
            Profile::new(TimeUs(1), TimeUs(1), TimeUs(1), TimeUs(0)),
            Profile::new(TimeUs(2), TimeUs(3), TimeUs(1), TimeUs(1)),
            Profile::new(TimeUs(5), TimeUs(6), TimeUs(2), TimeUs(0)),
        ];
        let mems = [MemoryModel::new(2, 1, None), MemoryModel::new(2, 1, Some(4))];
        for profile in &profiles {
            for mem in &mems {
                for (p, m) in [(2, 2), (3, 2), (2, 3)] {
                    let expected = brute_force(p, m, profile, mem).expect("feasible instance");
                    let sol = solve_exact(p, m, profile, mem, None).unwrap();
                    assert!(sol.proven_optimal);
                    assert_eq!(
                        sol.cost.as_us(),
                        expected,
                        "exact search must equal exhaustive minimum at p={p}, m={m}"
                    );
                    let run = simulate(&sol.schedule, profile).unwrap();
                    assert!(memory_trace(&run, mem).within_limit);
                }
            }
        }
    }

    #[test]
    fn warm_start_is_returned_when_already_optimal() {
        let profile = Profile::new(TimeUs(2), TimeUs(3), TimeUs(1), TimeUs(1));
        let mem = MemoryModel::new(2, 1, Some(4));
        let first = solve_exact(3, 2, &profile, &mem, None).unwrap();
        let again = solve_exact(3, 2, &profile, &mem, Some(&first.schedule)).unwrap();
        assert_eq!(again.cost, first.cost);
        assert!(again.proven_optimal);
        assert!(
            again.nodes_explored <= first.nodes_explored,
            "a tight incumbent can only shrink the tree"
        );
    }

    #[test]
    fn memory_limit_below_one_microbatch_is_refused() {
        let profile = Profile::unit();
        let mem = MemoryModel::new(3, 2, Some(2));
        match solve_exact(2, 2, &profile, &mem, None) {
            Err(IlpError::InfeasibleMemoryLimit { limit, needed }) => {
                assert_eq!((limit, needed), (2, 3));
            }
            other => panic!("expected an infeasible-limit error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_instances_are_refused_by_default() {
        let profile = Profile::unit();
        let mem = MemoryModel::new(1, 1, None);
        assert!(matches!(
            solve_exact(4, 2, &profile, &mem, None),
            Err(IlpError::InstanceTooLarge { .. })
        ));
        // Raising the limits explicitly admits the instance.
        let limits = SolveLimits { max_stages: 4, max_microbatches: 4, node_budget: None };
        assert!(solve_exact_with(4, 2, &profile, &mem, None, &limits).is_ok());
    }

    #[test]
    fn tight_memory_forces_the_serial_order() {
        // One activation's worth of budget never lets two forwards overlap:
        // the optimum degenerates to fully serial per microbatch.
        let profile = Profile::uniform(TimeUs(1));
        let mem = MemoryModel::new(1, 1, Some(1));
        let sol = solve_exact(1, 3, &profile, &mem, None).unwrap();
        assert_eq!(sol.cost, TimeUs(9));
        let kinds: Vec<PassKind> =
            sol.schedule.per_stage_order[0].iter().map(|p| p.kind).collect();
        assert_eq!(
            kinds,
            vec![
                PassKind::F,
                PassKind::B,
                PassKind::W,
                PassKind::F,
                PassKind::B,
                PassKind::W,
                PassKind::F,
                PassKind::B,
                PassKind::W
            ]
        );
    }
}
