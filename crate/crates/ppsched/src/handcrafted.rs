//! Deterministic builders for the classic pipeline schedules — 1F1B and its
//! interleaved variant — and for the two fixed-layout schedules that exploit
//! the B/W split: H1, which reorders W passes inside 1F1B's memory budget,
//! and H2, which adds warm-up forwards until the bubble collapses entirely.
//! Each family has a closed-form bubble and per-stage peak-memory expression;
//! the builders reproduce those forms exactly under `T_W ≤ T_F ≤ T_B` and
//! zero communication latency, which the tests pin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{MemoryModel, PassKind, PassRef, Profile, Schedule, TimeUs, Topology};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("interleaved schedules need m divisible by p (got m={m}, p={p})")]
    MicrobatchesNotDivisible { p: u32, m: u32 },
    #[error("p and m must both be at least 1")]
    EmptyPipeline,
}

fn pass(stage: u32, mb: u32, kind: PassKind) -> PassRef {
    PassRef::new(stage, mb, kind, 1)
}

/// Classic one-forward-one-backward schedule with the backward fused:
/// every B is immediately followed by its W, and downstream stages wait for
/// the full fused block. Stage i runs p−i+1 forwards before its first
/// backward, giving the familiar trapezoid warm-up.
pub fn build_1f1b(p: u32, m: u32) -> Result<Schedule, BuildError> {
    if p == 0 || m == 0 {
        return Err(BuildError::EmptyPipeline);
    }
    let mut per_stage_order = Vec::with_capacity(p as usize);
    for i in 1..=p {
        let warm = (p - i).min(m);
        let mut order = Vec::with_capacity(3 * m as usize);
        for j in 1..=warm {
            order.push(pass(i, j, PassKind::F));
        }
        for k in 1..=(m - warm) {
            order.push(pass(i, warm + k, PassKind::F));
            order.push(pass(i, k, PassKind::B));
            order.push(pass(i, k, PassKind::W));
        }
        for k in (m - warm + 1)..=m {
            order.push(pass(i, k, PassKind::B));
            order.push(pass(i, k, PassKind::W));
        }
        per_stage_order.push(order);
    }
    Ok(Schedule { topology: Topology::linear(p, m), per_stage_order, fused_bw: true })
}

/// Interleaved 1F1B: the model is cut into `chunks_per_stage` slices per
/// stage, placed cyclically, and each stage's forward/backward sequences walk
/// the chunks in groups of p microbatches. Shrinks the warm-up bubble by the
/// chunk count at the price of extra communication. Backward stays fused.
pub fn build_interleaved_1f1b(p: u32, m: u32, chunks_per_stage: u32) -> Result<Schedule, BuildError> {
    if p == 0 || m == 0 || chunks_per_stage == 0 {
        return Err(BuildError::EmptyPipeline);
    }
    if m % p != 0 {
        return Err(BuildError::MicrobatchesNotDivisible { p, m });
    }
    if chunks_per_stage == 1 {
        // Degenerate interleaving is exactly 1F1B.
        return build_1f1b(p, m);
    }
    let v = chunks_per_stage;
    let total = m * v; // passes per direction per stage
    let mut per_stage_order = Vec::with_capacity(p as usize);
    for rank in 0..p {
        // The k-th forward a stage runs: chunks advance every p passes,
        // microbatches advance in groups of p once all chunks cycled.
        let forward_at = |k: u32| {
            let chunk = (k / p) % v + 1;
            let mb = (k / (p * v)) * p + (k % p) + 1;
            (chunk, mb)
        };
        // Backwards walk the chunks in reverse.
        let backward_at = |k: u32| {
            let chunk = v - (k / p) % v;
            let mb = (k / (p * v)) * p + (k % p) + 1;
            (chunk, mb)
        };
        let stage = rank + 1;
        let warmup = ((p - rank - 1) * 2 + (v - 1) * p).min(total);
        let mut order = Vec::with_capacity(3 * total as usize);
        for k in 0..warmup {
            let (chunk, mb) = forward_at(k);
            order.push(PassRef::new(stage, mb, PassKind::F, chunk));
        }
        for k in warmup..total {
            let (chunk, mb) = forward_at(k);
            order.push(PassRef::new(stage, mb, PassKind::F, chunk));
            let (chunk, mb) = backward_at(k - warmup);
            order.push(PassRef::new(stage, mb, PassKind::B, chunk));
            order.push(PassRef::new(stage, mb, PassKind::W, chunk));
        }
        for k in (total - warmup)..total {
            let (chunk, mb) = backward_at(k);
            order.push(PassRef::new(stage, mb, PassKind::B, chunk));
            order.push(PassRef::new(stage, mb, PassKind::W, chunk));
        }
        per_stage_order.push(order);
    }
    Ok(Schedule {
        topology: Topology::interleaved(p, m, v),
        per_stage_order,
        fused_bw: true,
    })
}

/// H1: keeps 1F1B's forward pattern and memory budget but detaches W from B.
/// Stage i delays its weight passes by i−1 microbatches, spending the freed
/// slots on earlier B passes; the warm-up gains one forward per stage
/// (p−i+1 in total before the first B).
pub fn build_zb_h1(p: u32, m: u32) -> Result<Schedule, BuildError> {
    if p == 0 || m == 0 {
        return Err(BuildError::EmptyPipeline);
    }
    let mut per_stage_order = Vec::with_capacity(p as usize);
    for i in 1..=p {
        let warm = (p - i + 1).min(m);
        let delay = i - 1; // W_k runs alongside B_{k+delay}
        let mut order = Vec::with_capacity(3 * m as usize);
        for j in 1..=warm {
            order.push(pass(i, j, PassKind::F));
        }
        for k in 1..=m {
            order.push(pass(i, k, PassKind::B));
            if k > delay {
                order.push(pass(i, k - delay, PassKind::W));
            }
            if warm + k <= m {
                order.push(pass(i, warm + k, PassKind::F));
            }
        }
        for k in (m.saturating_sub(delay) + 1)..=m {
            order.push(pass(i, k, PassKind::W));
        }
        per_stage_order.push(order);
    }
    Ok(Schedule { topology: Topology::linear(p, m), per_stage_order, fused_bw: false })
}

/// H2: trades roughly double the activation memory for a bubble-free steady
/// state. Stage i issues 2(p−i)+1 warm-up forwards (filling what would be the
/// 1F1B bubble with real work) and defers 2(i−1) weight passes to the drain.
/// Needs m ≥ 2p−1 to reach the full parallelogram; below that the warm-up is
/// clamped and the schedule is merely best-effort.
pub fn build_zb_h2(p: u32, m: u32) -> Result<Schedule, BuildError> {
    if p == 0 || m == 0 {
        return Err(BuildError::EmptyPipeline);
    }
    let mut per_stage_order = Vec::with_capacity(p as usize);
    for i in 1..=p {
        let warm = (2 * (p - i) + 1).min(m);
        let delay = 2 * (i - 1);
        let mut order = Vec::with_capacity(3 * m as usize);
        for j in 1..=warm {
            order.push(pass(i, j, PassKind::F));
        }
        for k in 1..=m {
            order.push(pass(i, k, PassKind::B));
            if k > delay {
                order.push(pass(i, k - delay, PassKind::W));
            }
            if warm + k <= m {
                order.push(pass(i, warm + k, PassKind::F));
            }
        }
        for k in (m.saturating_sub(delay) + 1)..=m {
            order.push(pass(i, k, PassKind::W));
        }
        per_stage_order.push(order);
    }
    Ok(Schedule { topology: Topology::linear(p, m), per_stage_order, fused_bw: false })
}

/// The three schedule families with closed-form cost expressions.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum HandcraftedFamily {
    OneFOneB,
    ZbH1,
    ZbH2,
}

/// Closed-form bubble size and per-stage peak memory for a family.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ClosedForm {
    /// Idle time on the worst stage, for t_comm = 0 and T_W ≤ T_F ≤ T_B.
    pub bubble: TimeUs,
    /// Peak activation units per stage (index 0 = stage 1); stage 1 is
    /// always the maximum.
    pub stage_peaks: Vec<i64>,
}

impl ClosedForm {
    pub fn peak(&self) -> i64 {
        self.stage_peaks.first().copied().unwrap_or(0)
    }
}

/// Evaluates the closed forms with the given times and memory quantities.
///
/// Valid in each family's own domain: m ≥ p for 1F1B and H1, m ≥ 2p−1 for
/// H2; outside it the real schedules cannot reach these expressions.
pub fn analytic_bubble_and_memory(
    family: HandcraftedFamily,
    p: u32,
    profile: &Profile,
    mem: &MemoryModel,
) -> ClosedForm {
    let span = i64::from(p) - 1;
    let (bubble, peaks): (TimeUs, Vec<i64>) = match family {
        HandcraftedFamily::OneFOneB => (
            (profile.t_f + profile.t_b + profile.t_w) * span,
            (1..=p).map(|i| i64::from(p - i + 1) * mem.m_b).collect(),
        ),
        HandcraftedFamily::ZbH1 => (
            (profile.t_f + profile.t_b - profile.t_w) * span,
            (1..=p)
                .map(|i| i64::from(p - i + 1) * mem.m_b + i64::from(i - 1) * mem.m_w)
                .collect(),
        ),
        HandcraftedFamily::ZbH2 => (
            (profile.t_f + profile.t_b - profile.t_w - profile.t_w) * span,
            (1..=p)
                .map(|i| i64::from(2 * (p - i) + 1) * mem.m_b + i64::from(2 * (i - 1)) * mem.m_w)
                .collect(),
        ),
    };
    ClosedForm { bubble, stage_peaks: peaks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::validate_schedule;
    use crate::sim::{memory_trace, simulate};

    #[test]
    fn single_stage_is_strictly_sequential() {
        let s = build_1f1b(1, 2).unwrap();
        let expect: Vec<PassRef> = [
            (1, PassKind::F),
            (1, PassKind::B),
            (1, PassKind::W),
            (2, PassKind::F),
            (2, PassKind::B),
            (2, PassKind::W),
        ]
        .iter()
        .map(|&(mb, kind)| pass(1, mb, kind))
        .collect();
        assert_eq!(s.per_stage_order[0], expect);
    }

    #[test]
    fn all_builders_validate_across_sizes() {
        for p in [1u32, 2, 3, 4, 8] {
            for m in [1u32, 2, 4, 8, 16, 17] {
                for (name, s) in [
                    ("1f1b", build_1f1b(p, m).unwrap()),
                    ("h1", build_zb_h1(p, m).unwrap()),
                    ("h2", build_zb_h2(p, m).unwrap()),
                ] {
                    let report = validate_schedule(&s);
                    assert!(report.is_ok(), "{name} p={p} m={m}: {report}");
                }
                if m % p == 0 {
                    for v in [1u32, 2, 3] {
                        let s = build_interleaved_1f1b(p, m, v).unwrap();
                        let report = validate_schedule(&s);
                        assert!(report.is_ok(), "interleaved p={p} m={m} v={v}: {report}");
                    }
                }
            }
        }
    }

    #[test]
    fn unit_time_bubbles_match_the_table() {
        let profile = Profile::uniform(TimeUs(1));
        let one = simulate(&build_1f1b(4, 8).unwrap(), &profile).unwrap();
        assert_eq!(one.bubble, TimeUs(9), "1F1B bubble (p-1)(F+B+W)");
        assert_eq!(one.cost, TimeUs(33));
        let h1 = simulate(&build_zb_h1(4, 8).unwrap(), &profile).unwrap();
        assert_eq!(h1.bubble, TimeUs(3), "H1 bubble (p-1)(F+B-W)");
        let h2 = simulate(&build_zb_h2(4, 8).unwrap(), &profile).unwrap();
        assert_eq!(h2.bubble, TimeUs::ZERO, "H2 reaches zero bubble");
        assert_eq!(h2.cost, TimeUs(24));
    }

    #[test]
    fn skewed_times_still_match_closed_forms() {
        // T_W <= T_F <= T_B but far from uniform.
        let profile = Profile::new(TimeUs(2), TimeUs(3), TimeUs(1), TimeUs::ZERO);
        let mem = MemoryModel::new(5, 3, None);
        for (family, schedule) in [
            (HandcraftedFamily::OneFOneB, build_1f1b(3, 6).unwrap()),
            (HandcraftedFamily::ZbH1, build_zb_h1(3, 6).unwrap()),
            (HandcraftedFamily::ZbH2, build_zb_h2(3, 6).unwrap()),
        ] {
            let form = analytic_bubble_and_memory(family, 3, &profile, &mem);
            let run = simulate(&schedule, &profile).unwrap();
            assert_eq!(run.bubble, form.bubble, "{family:?} bubble");
            let trace = memory_trace(&run, &mem);
            let peaks: Vec<i64> = trace.per_stage.iter().map(|s| s.peak).collect();
            assert_eq!(peaks, form.stage_peaks, "{family:?} per-stage peaks");
        }
    }

    #[test]
    fn closed_form_examples() {
        let mem = MemoryModel::new(1, 1, None);
        let t8 = Profile::new(TimeUs(18_522), TimeUs(18_086), TimeUs(9_337), TimeUs(601));
        let form = analytic_bubble_and_memory(HandcraftedFamily::OneFOneB, 8, &t8, &mem);
        assert_eq!(form.bubble.as_us(), 7 * (18_522 + 18_086 + 9_337));
        let h2 = analytic_bubble_and_memory(
            HandcraftedFamily::ZbH2,
            5,
            &Profile::new(TimeUs(1), TimeUs(3), TimeUs(2), TimeUs::ZERO),
            &mem,
        );
        assert_eq!(h2.bubble, TimeUs::ZERO, "T_F+T_B=2T_W zeroes the H2 form");
        let h1 = analytic_bubble_and_memory(HandcraftedFamily::ZbH1, 2, &Profile::uniform(TimeUs(1)), &mem);
        assert_eq!(h1.bubble, TimeUs(1));
    }

    #[test]
    fn h2_peak_memory_examples() {
        let mem = MemoryModel::new(10, 7, None);
        let form = analytic_bubble_and_memory(HandcraftedFamily::ZbH2, 4, &Profile::unit(), &mem);
        assert_eq!(form.peak(), 7 * 10, "stage-1 peak (2p-1) M_B");
        let h1 = analytic_bubble_and_memory(HandcraftedFamily::ZbH1, 4, &Profile::unit(), &mem);
        assert_eq!(h1.stage_peaks[1], 3 * 10 + 7, "stage-2 H1 peak (p-i+1)M_B+(i-1)M_W");
    }

    #[test]
    fn interleaving_beats_plain_1f1b() {
        let profile = Profile::uniform(TimeUs(6));
        let plain = simulate(&build_1f1b(4, 8).unwrap(), &profile).unwrap();
        let inter = simulate(&build_interleaved_1f1b(4, 8, 2).unwrap(), &profile.split(2)).unwrap();
        assert!(
            inter.cost < plain.cost,
            "interleaved {:?} should beat 1F1B {:?}",
            inter.cost,
            plain.cost
        );
    }

    #[test]
    fn interleaved_rejects_ragged_microbatches() {
        assert_eq!(
            build_interleaved_1f1b(4, 6, 2),
            Err(BuildError::MicrobatchesNotDivisible { p: 4, m: 6 })
        );
    }

    #[test]
    fn degenerate_interleaving_is_exactly_1f1b() {
        assert_eq!(build_interleaved_1f1b(4, 8, 1).unwrap(), build_1f1b(4, 8).unwrap());
    }
}
