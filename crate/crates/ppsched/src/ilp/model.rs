//! Materialized mixed-integer model: variables, constraints, and the
//! schedule↔assignment bridges.

use std::collections::BTreeMap;

use crate::core::{MemoryModel, PassKind, PassRef, Profile, Schedule, TimeUs, Topology};
use crate::sim::simulate;

use super::IlpError;

/// Default ceiling on total variable count for [`build_model`].
///
/// Ordering binaries grow as p·3m(3m−1)/2; the cap refuses models that
/// nothing downstream could digest anyway.
pub const DEFAULT_VARIABLE_CAP: usize = 50_000;

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum VarKind {
    Continuous,
    Binary,
}

/// One variable: kind plus inclusive bounds (binaries are fixed to {0,1}).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VarDef {
    pub kind: VarKind,
    pub lower: i64,
    pub upper: Option<i64>,
}

/// Constraint comparator.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

/// One linear constraint: `terms cmp rhs`, terms as (coefficient, variable).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(i64, String)>,
    pub cmp: Cmp,
    pub rhs: i64,
}

/// A minimization program over named variables.
///
/// Variables are keyed by name so a program re-read from text compares equal
/// to the one that produced it; constraint order is load-bearing only for
/// deterministic export.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct LinearProgram {
    /// Linear objective, minimized.
    pub objective: Vec<(i64, String)>,
    pub vars: BTreeMap<String, VarDef>,
    pub constraints: Vec<Constraint>,
}

/// The ordering problem as a mixed-integer program, plus the dimensions
/// needed to move between schedules and assignments.
///
/// Variables: one continuous end time `E_i_j_c` per pass (stage i, microbatch
/// j, kind c), one epigraph variable `C` bounding every stage's span, and one
/// binary `O_i_j_c_jp_cp` per unordered same-stage pass pair, equal to 1 when
/// pass (j, c) runs before (j', c').
#[derive(Clone, PartialEq, Debug)]
pub struct IlpModel {
    pub stages: u32,
    pub microbatches: u32,
    pub profile: Profile,
    pub mem: MemoryModel,
    /// Upper bound on every end time: the sum of all pass durations plus all
    /// communication delays, which no as-soon-as-possible execution of a
    /// valid ordering can exceed.
    pub horizon: i64,
    /// Finite stand-in for the disjunctive constraints' "switched off" side:
    /// the horizon plus the longest duration plus one, so the relaxed half of
    /// an ordering pair can never bind within the horizon box.
    pub big_m: i64,
    pub lp: LinearProgram,
}

/// Outcome of checking an assignment against a model.
#[derive(Clone, PartialEq, Debug)]
pub struct Evaluation {
    /// The model objective recomputed from the end-time variables: the
    /// largest per-stage span.
    pub objective: TimeUs,
    /// Human-readable names of violated constraints/bounds; empty means the
    /// assignment is feasible.
    pub violations: Vec<String>,
}

fn kind_tag(kind: PassKind) -> &'static str {
    match kind {
        PassKind::F => "F",
        PassKind::B => "B",
        PassKind::W => "W",
    }
}

const KINDS: [PassKind; 3] = [PassKind::F, PassKind::B, PassKind::W];

/// Name of a pass's end-time variable.
pub fn end_var(stage: u32, microbatch: u32, kind: PassKind) -> String {
    format!("E_{}_{}_{}", stage, microbatch, kind_tag(kind))
}

/// Name of the ordering binary for two same-stage passes, first-before-second.
pub fn order_var(stage: u32, a: (u32, PassKind), b: (u32, PassKind)) -> String {
    format!(
        "O_{}_{}_{}_{}_{}",
        stage,
        a.0,
        kind_tag(a.1),
        b.0,
        kind_tag(b.1)
    )
}

/// All passes of one stage in canonical rank order (F's, then B's, then W's,
/// microbatch ascending within each kind). Pair variables and the memory
/// constraints index pairs by this rank.
fn stage_passes(m: u32) -> Vec<(u32, PassKind)> {
    let mut out = Vec::with_capacity(3 * m as usize);
    for kind in KINDS {
        for j in 1..=m {
            out.push((j, kind));
        }
    }
    out
}

/// Builds the model with the default variable cap.
pub fn build_model(
    p: u32,
    m: u32,
    profile: &Profile,
    mem: &MemoryModel,
) -> Result<IlpModel, IlpError> {
    build_model_capped(p, m, profile, mem, DEFAULT_VARIABLE_CAP)
}

/// Builds the model, refusing when the variable count would exceed `cap`.
pub fn build_model_capped(
    p: u32,
    m: u32,
    profile: &Profile,
    mem: &MemoryModel,
    cap: usize,
) -> Result<IlpModel, IlpError> {
    assert!(p >= 1 && m >= 1, "model needs at least one stage and microbatch");
    let per_stage = 3 * m as usize;
    let pairs_per_stage = per_stage * (per_stage - 1) / 2;
    let variables = 1 + p as usize * per_stage + p as usize * pairs_per_stage;
    if variables > cap {
        return Err(IlpError::ModelTooLarge { variables, cap });
    }

    let tf = profile.t_f.as_us();
    let tb = profile.t_b.as_us();
    let tw = profile.t_w.as_us();
    let tc = profile.t_comm.as_us();
    // Run any valid per-stage ordering as-soon-as-possible and trace a busy
    // pass backwards: every waiting interval is covered by some other pass
    // running or a message in flight, and none repeats, so no end time can
    // exceed the sum of all durations plus all communication delays. That
    // horizon bounds the end-time variables, and padding it by the longest
    // duration (plus one for strictness) gives a disjunction constant large
    // enough to fully deactivate the relaxed side of every ordering pair.
    let horizon = p as i64 * m as i64 * (tf + tb + tw) + 2 * (p as i64 - 1) * m as i64 * tc;
    let big_m = horizon + tf.max(tb).max(tw) + 1;
    let duration = |kind: PassKind| match kind {
        PassKind::F => tf,
        PassKind::B => tb,
        PassKind::W => tw,
    };
    let delta = |kind: PassKind| mem.delta(kind);

    let mut lp = LinearProgram {
        objective: vec![(1, "C".to_string())],
        ..LinearProgram::default()
    };
    lp.vars.insert(
        "C".to_string(),
        VarDef { kind: VarKind::Continuous, lower: 0, upper: Some(horizon) },
    );
    for i in 1..=p {
        for kind in KINDS {
            for j in 1..=m {
                lp.vars.insert(
                    end_var(i, j, kind),
                    VarDef {
                        kind: VarKind::Continuous,
                        lower: duration(kind),
                        upper: Some(horizon),
                    },
                );
            }
        }
    }
    let ranked = stage_passes(m);
    for i in 1..=p {
        for (ra, &a) in ranked.iter().enumerate() {
            for &b in ranked.iter().skip(ra + 1) {
                lp.vars.insert(
                    order_var(i, a, b),
                    VarDef { kind: VarKind::Binary, lower: 0, upper: Some(1) },
                );
            }
        }
    }

    // Epigraph: C dominates every stage's span (last W end minus first F
    // start, the start recovered as end minus duration).
    for i in 1..=p {
        lp.constraints.push(Constraint {
            name: format!("span_{i}"),
            terms: vec![
                (1, "C".to_string()),
                (-1, end_var(i, m, PassKind::W)),
                (1, end_var(i, 1, PassKind::F)),
            ],
            cmp: Cmp::Ge,
            rhs: tf,
        });
    }
    // Forward chain between adjacent stages.
    for i in 2..=p {
        for j in 1..=m {
            lp.constraints.push(Constraint {
                name: format!("fchain_{i}_{j}"),
                terms: vec![
                    (1, end_var(i, j, PassKind::F)),
                    (-1, end_var(i - 1, j, PassKind::F)),
                ],
                cmp: Cmp::Ge,
                rhs: tc + tf,
            });
        }
    }
    // Backward chain between adjacent stages.
    for i in 1..p {
        for j in 1..=m {
            lp.constraints.push(Constraint {
                name: format!("bchain_{i}_{j}"),
                terms: vec![
                    (1, end_var(i, j, PassKind::B)),
                    (-1, end_var(i + 1, j, PassKind::B)),
                ],
                cmp: Cmp::Ge,
                rhs: tc + tb,
            });
        }
    }
    // Turnaround: the last stage's B consumes its own F, no hop in between.
    for j in 1..=m {
        lp.constraints.push(Constraint {
            name: format!("turn_{j}"),
            terms: vec![
                (1, end_var(p, j, PassKind::B)),
                (-1, end_var(p, j, PassKind::F)),
            ],
            cmp: Cmp::Ge,
            rhs: tb,
        });
    }
    // W consumes its microbatch's B on the same stage.
    for i in 1..=p {
        for j in 1..=m {
            lp.constraints.push(Constraint {
                name: format!("wseq_{i}_{j}"),
                terms: vec![
                    (1, end_var(i, j, PassKind::W)),
                    (-1, end_var(i, j, PassKind::B)),
                ],
                cmp: Cmp::Ge,
                rhs: tw,
            });
        }
    }
    // Same-stage disjunctions: exactly one of the pair runs first, the
    // binary switching off the other side's separation constraint.
    for i in 1..=p {
        for (ra, &a) in ranked.iter().enumerate() {
            for &b in ranked.iter().skip(ra + 1) {
                let o = order_var(i, a, b);
                let ea = end_var(i, a.0, a.1);
                let eb = end_var(i, b.0, b.1);
                lp.constraints.push(Constraint {
                    name: format!("ord_{}_{}_{}_{}_{}_a", i, a.0, kind_tag(a.1), b.0, kind_tag(b.1)),
                    terms: vec![(1, ea.clone()), (-1, eb.clone()), (big_m, o.clone())],
                    cmp: Cmp::Ge,
                    rhs: duration(a.1),
                });
                lp.constraints.push(Constraint {
                    name: format!("ord_{}_{}_{}_{}_{}_b", i, a.0, kind_tag(a.1), b.0, kind_tag(b.1)),
                    terms: vec![(1, eb), (-1, ea), (-big_m, o)],
                    cmp: Cmp::Ge,
                    rhs: duration(b.1) - big_m,
                });
            }
        }
    }
    // Activation budget: for each pass, its own increment plus the sum of
    // increments of everything ordered before it stays within the limit.
    // "a before b" for a ranked after b reads the pair binary inverted, which
    // moves that constant into the right-hand side.
    if let Some(limit) = mem.m_limit {
        for i in 1..=p {
            for (rb, &b) in ranked.iter().enumerate() {
                let mut terms = Vec::new();
                let mut rhs = limit - delta(b.1);
                for (ra, &a) in ranked.iter().enumerate() {
                    if ra == rb {
                        continue;
                    }
                    let coeff = delta(a.1);
                    if ra < rb {
                        if coeff != 0 {
                            terms.push((coeff, order_var(i, a, b)));
                        }
                    } else {
                        if coeff != 0 {
                            terms.push((-coeff, order_var(i, b, a)));
                        }
                        rhs -= coeff;
                    }
                }
                lp.constraints.push(Constraint {
                    name: format!("mem_{}_{}_{}", i, b.0, kind_tag(b.1)),
                    terms,
                    cmp: Cmp::Le,
                    rhs,
                });
            }
        }
    }

    Ok(IlpModel {
        stages: p,
        microbatches: m,
        profile: *profile,
        mem: *mem,
        horizon,
        big_m,
        lp,
    })
}

impl IlpModel {
    fn duration(&self, kind: PassKind) -> i64 {
        self.profile.duration(kind).as_us()
    }

    fn check_dims(&self, schedule: &Schedule) -> Result<(), IlpError> {
        let topo = &schedule.topology;
        if topo.stages != self.stages
            || topo.microbatches != self.microbatches
            || topo.chunks_per_stage != 1
        {
            return Err(IlpError::ScheduleMismatch(format!(
                "model is p={}, m={}, single-chunk; schedule is p={}, m={}, chunks={}",
                self.stages,
                self.microbatches,
                topo.stages,
                topo.microbatches,
                topo.chunks_per_stage
            )));
        }
        if schedule.fused_bw {
            return Err(IlpError::ScheduleMismatch(
                "fused-backward schedules anchor the backward chain differently".to_string(),
            ));
        }
        Ok(())
    }

    /// Runs the schedule through the simulator and reads off a full variable
    /// assignment: end times for `E`, pair orderings for `O`, and the cost
    /// for `C`.
    pub fn encode_schedule(&self, schedule: &Schedule) -> Result<BTreeMap<String, i64>, IlpError> {
        self.check_dims(schedule)?;
        let run = simulate(schedule, &self.profile)
            .map_err(|e| IlpError::ScheduleMismatch(e.to_string()))?;
        let mut values = BTreeMap::new();
        values.insert("C".to_string(), run.cost.as_us());
        let ranked = stage_passes(self.microbatches);
        for (row, passes) in run.stage_passes.iter().enumerate() {
            let stage = row as u32 + 1;
            let mut position = BTreeMap::new();
            for (pos, timed) in passes.iter().enumerate() {
                values.insert(
                    end_var(stage, timed.pass.microbatch, timed.pass.kind),
                    timed.end.as_us(),
                );
                position.insert((timed.pass.microbatch, timed.pass.kind), pos);
            }
            for (ra, &a) in ranked.iter().enumerate() {
                for &b in ranked.iter().skip(ra + 1) {
                    let first = position[&a] < position[&b];
                    values.insert(order_var(stage, a, b), first as i64);
                }
            }
        }
        Ok(values)
    }

    /// Recomputes the objective from the end-time variables and checks every
    /// constraint and bound. The objective is computed, not read from `C`, so
    /// a mis-set epigraph variable shows up as a violation rather than a
    /// wrong optimum.
    pub fn evaluate(&self, values: &BTreeMap<String, i64>) -> Result<Evaluation, IlpError> {
        let get = |name: &str| -> Result<i64, IlpError> {
            values
                .get(name)
                .copied()
                .ok_or_else(|| IlpError::MissingVariable(name.to_string()))
        };
        let mut objective = i64::MIN;
        for i in 1..=self.stages {
            let span = get(&end_var(i, self.microbatches, PassKind::W))?
                - get(&end_var(i, 1, PassKind::F))?
                + self.duration(PassKind::F);
            objective = objective.max(span);
        }
        let mut violations = Vec::new();
        for c in &self.lp.constraints {
            let mut lhs = 0i64;
            for (coeff, var) in &c.terms {
                lhs += coeff * get(var)?;
            }
            let ok = match c.cmp {
                Cmp::Le => lhs <= c.rhs,
                Cmp::Ge => lhs >= c.rhs,
                Cmp::Eq => lhs == c.rhs,
            };
            if !ok {
                violations.push(c.name.clone());
            }
        }
        for (name, def) in &self.lp.vars {
            let v = get(name)?;
            let below = v < def.lower;
            let above = def.upper.map_or(false, |u| v > u);
            if below || above {
                violations.push(format!("bounds:{name}"));
            }
        }
        Ok(Evaluation { objective: TimeUs(objective), violations })
    }

    /// Rebuilds a schedule from a (possibly fractional) solver assignment by
    /// sorting each stage's passes on their implied start times.
    pub fn decode_solution(
        &self,
        values: &BTreeMap<String, f64>,
    ) -> Result<Schedule, IlpError> {
        let mut per_stage_order = Vec::with_capacity(self.stages as usize);
        for i in 1..=self.stages {
            let mut row = Vec::with_capacity(3 * self.microbatches as usize);
            for (rank, &(j, kind)) in stage_passes(self.microbatches).iter().enumerate() {
                let name = end_var(i, j, kind);
                let end = values
                    .get(&name)
                    .copied()
                    .ok_or(IlpError::MissingVariable(name))?;
                let start = end - self.duration(kind) as f64;
                row.push((start, end, rank, PassRef::new(i, j, kind, 1)));
            }
            row.sort_by(|x, y| {
                (x.0, x.1, x.2)
                    .partial_cmp(&(y.0, y.1, y.2))
                    .expect("end times are finite")
            });
            per_stage_order.push(row.into_iter().map(|(_, _, _, pass)| pass).collect());
        }
        Ok(Schedule {
            topology: Topology::linear(self.stages, self.microbatches),
            per_stage_order,
            fused_bw: false,
        })
    }
}
