//! The schedule artifact: a per-stage execution order over passes, plus the
//! rules for deriving the dependency DAG it must respect.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::pass::{PassKind, PassRef};
use super::time::TimeUs;
use super::topology::Topology;

/// A complete pipeline schedule for one training iteration.
///
/// The schedule is purely an *order*: stage i executes `per_stage_order[i-1]`
/// left to right, each pass starting as soon as its stage is free and its
/// dependencies (see [`dependency_edges`]) have completed. Times never appear
/// in the artifact, which keeps it portable across profiles.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub topology: Topology,
    /// `per_stage_order[i-1]` lists every pass stage i runs, in order.
    pub per_stage_order: Vec<Vec<PassRef>>,
    /// True for baselines that run B and W as one fused block per microbatch.
    /// The cross-stage backward dependency then anchors to the upstream W's
    /// completion rather than its B's, which is what an unsplit backward
    /// implementation actually waits for.
    #[serde(default)]
    pub fused_bw: bool,
}

/// Dense index over every pass a schedule must contain.
#[derive(Copy, Clone, Debug)]
pub struct PassIndexer {
    stages: u32,
    microbatches: u32,
    chunks: u32,
}

impl PassIndexer {
    pub fn new(topology: &Topology) -> PassIndexer {
        PassIndexer {
            stages: topology.stages,
            microbatches: topology.microbatches,
            chunks: topology.chunks_per_stage,
        }
    }

    pub fn total(&self) -> usize {
        (self.stages * self.chunks * 3 * self.microbatches) as usize
    }

    /// Dense index of a pass; caller must have bounds-checked the fields.
    pub fn index(&self, pass: PassRef) -> usize {
        let kind = match pass.kind {
            PassKind::F => 0,
            PassKind::B => 1,
            PassKind::W => 2,
        };
        let slot = (pass.stage - 1) * self.chunks + (pass.chunk - 1);
        (slot * 3 * self.microbatches + kind * self.microbatches + (pass.microbatch - 1)) as usize
    }

    pub fn in_bounds(&self, pass: PassRef) -> bool {
        pass.stage >= 1
            && pass.stage <= self.stages
            && pass.chunk >= 1
            && pass.chunk <= self.chunks
            && pass.microbatch >= 1
            && pass.microbatch <= self.microbatches
    }
}

/// One dependency edge: `to` may start only after `from` ends plus `latency`.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DepEdge {
    pub from: PassRef,
    pub to: PassRef,
    pub latency: TimeUs,
}

/// Semantic dependency edges of a schedule (excluding the per-stage execution
/// order itself):
///
/// * forward chain — `F` of global position g feeds `F` of position g+1;
/// * backward chain — `B` of position g+1 feeds `B` of position g (anchored
///   to the upstream `W` instead when [`Schedule::fused_bw`] is set);
/// * per (position, microbatch) — `F` before `B` before `W` on the hosting
///   stage.
///
/// Cross-stage edges carry `t_comm`; edges between positions hosted by the
/// same stage are free.
pub fn dependency_edges(schedule: &Schedule, t_comm: TimeUs) -> Vec<DepEdge> {
    let topo = &schedule.topology;
    let positions = topo.positions();
    let mut edges = Vec::new();
    for mb in 1..=topo.microbatches {
        for g in 1..=positions {
            let here = topo.slot(g);
            // F -> B -> W within one (position, microbatch).
            edges.push(DepEdge {
                from: PassRef::new(here.stage, mb, PassKind::F, here.chunk),
                to: PassRef::new(here.stage, mb, PassKind::B, here.chunk),
                latency: TimeUs::ZERO,
            });
            edges.push(DepEdge {
                from: PassRef::new(here.stage, mb, PassKind::B, here.chunk),
                to: PassRef::new(here.stage, mb, PassKind::W, here.chunk),
                latency: TimeUs::ZERO,
            });
            if g < positions {
                let next = topo.slot(g + 1);
                let hop = if next.stage == here.stage { TimeUs::ZERO } else { t_comm };
                edges.push(DepEdge {
                    from: PassRef::new(here.stage, mb, PassKind::F, here.chunk),
                    to: PassRef::new(next.stage, mb, PassKind::F, next.chunk),
                    latency: hop,
                });
                let back_kind = if schedule.fused_bw { PassKind::W } else { PassKind::B };
                edges.push(DepEdge {
                    from: PassRef::new(next.stage, mb, back_kind, next.chunk),
                    to: PassRef::new(here.stage, mb, PassKind::B, here.chunk),
                    latency: hop,
                });
            }
        }
    }
    edges
}

/// A single validation failure, tied to the pass or stage involved.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Violation {
    /// per_stage_order has the wrong number of rows.
    StageRows { expected: u32, found: usize },
    /// A pass is listed on a stage row that does not match its own field,
    /// or references a slot/microbatch outside the topology.
    ForeignPass { row_stage: u32, pass: PassRef },
    DuplicatePass { pass: PassRef },
    MissingPass { pass: PassRef },
    /// On one stage, B listed before its F, or W before its B.
    LocalOrder { earlier: PassRef, later: PassRef },
    /// The per-stage orders contradict the cross-stage dependency chains.
    DependencyCycle { witness: PassRef },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StageRows { expected, found } => {
                write!(f, "expected {expected} stage rows, found {found}")
            }
            Violation::ForeignPass { row_stage, pass } => {
                write!(f, "pass {pass} cannot appear on stage {row_stage}")
            }
            Violation::DuplicatePass { pass } => write!(f, "pass {pass} scheduled twice"),
            Violation::MissingPass { pass } => write!(f, "pass {pass} never scheduled"),
            Violation::LocalOrder { earlier, later } => {
                write!(f, "pass {earlier} must run before {later} on their stage")
            }
            Violation::DependencyCycle { witness } => {
                write!(f, "schedule deadlocks: {witness} waits on work scheduled after it")
            }
        }
    }
}

/// Outcome of [`validate_schedule`].
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "schedule is valid");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks completeness (every pass exactly once on its own stage), local
/// F→B→W ordering per (microbatch, chunk), and acyclicity of the per-stage
/// orders against the cross-stage chains.
///
/// The cycle check only runs when the earlier structural checks pass; a
/// malformed pass multiset makes the dependency graph meaningless.
pub fn validate_schedule(schedule: &Schedule) -> ValidationReport {
    let mut report = ValidationReport::default();
    let topo = &schedule.topology;
    if topo.check().is_err() {
        // Surface a topology problem as a single structural violation.
        report.violations.push(Violation::StageRows {
            expected: topo.stages,
            found: schedule.per_stage_order.len(),
        });
        return report;
    }
    if schedule.per_stage_order.len() != topo.stages as usize {
        report.violations.push(Violation::StageRows {
            expected: topo.stages,
            found: schedule.per_stage_order.len(),
        });
        return report;
    }

    let indexer = PassIndexer::new(topo);
    let mut seen = vec![false; indexer.total()];
    let mut structural_ok = true;
    for (row, order) in schedule.per_stage_order.iter().enumerate() {
        let row_stage = row as u32 + 1;
        for &pass in order {
            if !indexer.in_bounds(pass)
                || pass.stage != row_stage
                || topo.position_of(pass.stage, pass.chunk).is_none()
            {
                report.violations.push(Violation::ForeignPass { row_stage, pass });
                structural_ok = false;
                continue;
            }
            let idx = indexer.index(pass);
            if seen[idx] {
                report.violations.push(Violation::DuplicatePass { pass });
                structural_ok = false;
            }
            seen[idx] = true;
        }
    }
    for stage in 1..=topo.stages {
        for chunk in 1..=topo.chunks_per_stage {
            if topo.position_of(stage, chunk).is_none() {
                continue;
            }
            for mb in 1..=topo.microbatches {
                for kind in PassKind::ALL {
                    let pass = PassRef::new(stage, mb, kind, chunk);
                    if !seen[indexer.index(pass)] {
                        report.violations.push(Violation::MissingPass { pass });
                        structural_ok = false;
                    }
                }
            }
        }
    }
    if !structural_ok {
        return report;
    }

    // Local F -> B -> W order per (microbatch, chunk).
    let mut rank = vec![0usize; indexer.total()];
    for order in &schedule.per_stage_order {
        for (pos, &pass) in order.iter().enumerate() {
            rank[indexer.index(pass)] = pos;
        }
    }
    for stage in 1..=topo.stages {
        for chunk in 1..=topo.chunks_per_stage {
            for mb in 1..=topo.microbatches {
                let f = PassRef::new(stage, mb, PassKind::F, chunk);
                let b = PassRef::new(stage, mb, PassKind::B, chunk);
                let w = PassRef::new(stage, mb, PassKind::W, chunk);
                if rank[indexer.index(f)] > rank[indexer.index(b)] {
                    report.violations.push(Violation::LocalOrder { earlier: f, later: b });
                }
                if rank[indexer.index(b)] > rank[indexer.index(w)] {
                    report.violations.push(Violation::LocalOrder { earlier: b, later: w });
                }
            }
        }
    }
    if !report.is_ok() {
        return report;
    }

    // Acyclicity of order edges + dependency edges.
    let total = indexer.total();
    let mut adjacency = vec![Vec::new(); total];
    let mut indegree = vec![0u32; total];
    let add_edge = |from: usize, to: usize, adjacency: &mut Vec<Vec<usize>>, indegree: &mut Vec<u32>| {
        adjacency[from].push(to);
        indegree[to] += 1;
    };
    for order in &schedule.per_stage_order {
        for pair in order.windows(2) {
            add_edge(indexer.index(pair[0]), indexer.index(pair[1]), &mut adjacency, &mut indegree);
        }
    }
    for edge in dependency_edges(schedule, TimeUs::ZERO) {
        add_edge(indexer.index(edge.from), indexer.index(edge.to), &mut adjacency, &mut indegree);
    }
    let mut queue: VecDeque<usize> = (0..total).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0usize;
    while let Some(node) = queue.pop_front() {
        visited += 1;
        for &next in &adjacency[node] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                queue.push_back(next);
            }
        }
    }
    if visited != total {
        // Earliest stuck pass in stage order makes a readable witness.
        let witness = schedule
            .per_stage_order
            .iter()
            .flatten()
            .find(|&&pass| indegree[indexer.index(pass)] > 0)
            .copied()
            .expect("cycle implies a stuck pass");
        report.violations.push(Violation::DependencyCycle { witness });
    }
    report
}

impl Schedule {
    /// Convenience wrapper: `Ok` iff [`validate_schedule`] finds nothing.
    pub fn ensure_valid(&self) -> Result<(), ValidationReport> {
        let report = validate_schedule(self);
        if report.is_ok() {
            Ok(())
        } else {
            Err(report)
        }
    }

    /// Passes per stage (each stage runs the same count in a complete schedule).
    pub fn passes_per_stage(&self) -> usize {
        (3 * self.topology.microbatches * self.topology.chunks_per_stage) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_stage_one_batch() -> Schedule {
        // p=2, m=1: stage 1 runs F B W, stage 2 runs F B W.
        let topology = Topology::linear(2, 1);
        let order = |stage: u32| {
            vec![
                PassRef::new(stage, 1, PassKind::F, 1),
                PassRef::new(stage, 1, PassKind::B, 1),
                PassRef::new(stage, 1, PassKind::W, 1),
            ]
        };
        Schedule { topology, per_stage_order: vec![order(1), order(2)], fused_bw: false }
    }

    #[test]
    fn minimal_schedule_validates() {
        assert!(validate_schedule(&two_stage_one_batch()).is_ok());
    }

    #[test]
    fn edges_for_two_stages_one_microbatch() {
        let s = two_stage_one_batch();
        let edges = dependency_edges(&s, TimeUs(7));
        let has = |from: PassRef, to: PassRef, latency: i64| {
            edges.iter().any(|e| e.from == from && e.to == to && e.latency == TimeUs(latency))
        };
        assert!(has(
            PassRef::new(1, 1, PassKind::F, 1),
            PassRef::new(2, 1, PassKind::F, 1),
            7
        ));
        assert!(has(
            PassRef::new(2, 1, PassKind::B, 1),
            PassRef::new(1, 1, PassKind::B, 1),
            7
        ));
        assert!(has(
            PassRef::new(2, 1, PassKind::F, 1),
            PassRef::new(2, 1, PassKind::B, 1),
            0
        ));
        assert!(has(
            PassRef::new(1, 1, PassKind::B, 1),
            PassRef::new(1, 1, PassKind::W, 1),
            0
        ));
        // F chain + B chain + 2 per-slot pairs * 2 slots.
        assert_eq!(edges.len(), 6);
    }

    #[test]
    fn fused_backward_anchors_to_upstream_w() {
        let mut s = two_stage_one_batch();
        s.fused_bw = true;
        let edges = dependency_edges(&s, TimeUs(7));
        assert!(edges.iter().any(|e| e.from == PassRef::new(2, 1, PassKind::W, 1)
            && e.to == PassRef::new(1, 1, PassKind::B, 1)));
        assert!(!edges.iter().any(|e| e.from == PassRef::new(2, 1, PassKind::B, 1)
            && e.to == PassRef::new(1, 1, PassKind::B, 1)));
    }

    #[test]
    fn rejects_w_before_b() {
        let mut s = two_stage_one_batch();
        s.per_stage_order[0].swap(1, 2);
        let report = validate_schedule(&s);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::LocalOrder { earlier, .. }
                if earlier.kind == PassKind::B)));
    }

    #[test]
    fn rejects_duplicates_and_missing() {
        let mut s = two_stage_one_batch();
        s.per_stage_order[0][2] = PassRef::new(1, 1, PassKind::F, 1);
        let report = validate_schedule(&s);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::DuplicatePass { .. })));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::MissingPass { .. })));
    }

    #[test]
    fn rejects_pass_on_wrong_stage() {
        let mut s = two_stage_one_batch();
        s.per_stage_order[0][0] = PassRef::new(2, 1, PassKind::F, 1);
        let report = validate_schedule(&s);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::ForeignPass { .. })));
    }

    #[test]
    fn detects_cross_stage_deadlock() {
        // Stage 1 insists on B(1,1) before F(1,2); stage 2 needs F(2,2) -> B... wait:
        // make stage 2 put B(2,1) after F(2,2), while stage 1 puts F(1,2) after B(1,1).
        // Then B(1,1) waits on B(2,1), which waits on F(2,2), which waits on F(1,2),
        // which waits on B(1,1): a cycle across the two stage orders.
        let topology = Topology::linear(2, 2);
        let s = Schedule {
            topology,
            per_stage_order: vec![
                vec![
                    PassRef::new(1, 1, PassKind::F, 1),
                    PassRef::new(1, 1, PassKind::B, 1),
                    PassRef::new(1, 1, PassKind::W, 1),
                    PassRef::new(1, 2, PassKind::F, 1),
                    PassRef::new(1, 2, PassKind::B, 1),
                    PassRef::new(1, 2, PassKind::W, 1),
                ],
                vec![
                    PassRef::new(2, 1, PassKind::F, 1),
                    PassRef::new(2, 2, PassKind::F, 1),
                    PassRef::new(2, 1, PassKind::B, 1),
                    PassRef::new(2, 1, PassKind::W, 1),
                    PassRef::new(2, 2, PassKind::B, 1),
                    PassRef::new(2, 2, PassKind::W, 1),
                ],
            ],
            fused_bw: false,
        };
        let report = validate_schedule(&s);
        assert!(
            report.violations.iter().any(|v| matches!(v, Violation::DependencyCycle { .. })),
            "expected a cycle, got: {report}"
        );
    }
}
