//! Pass-time profiles and per-stage activation accounting units.

use serde::{Deserialize, Serialize};

use super::pass::PassKind;
use super::time::TimeUs;

/// Per-pass durations and the point-to-point communication latency.
///
/// For chunked placements the durations are *per chunk pass*, i.e. a stage
/// hosting two chunks runs each F for half a full stage slice.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Profile {
    pub t_f: TimeUs,
    pub t_b: TimeUs,
    pub t_w: TimeUs,
    pub t_comm: TimeUs,
}

impl Profile {
    pub fn new(t_f: TimeUs, t_b: TimeUs, t_w: TimeUs, t_comm: TimeUs) -> Profile {
        Profile { t_f, t_b, t_w, t_comm }
    }

    /// All compute passes take `t`, communication is free. The regime where
    /// the zero-bubble certificates hold exactly.
    pub fn uniform(t: TimeUs) -> Profile {
        Profile { t_f: t, t_b: t, t_w: t, t_comm: TimeUs::ZERO }
    }

    /// `uniform(1ms)` — handy for closed-form checks.
    pub fn unit() -> Profile {
        Profile::uniform(TimeUs::from_us(1_000))
    }

    pub fn duration(&self, kind: PassKind) -> TimeUs {
        match kind {
            PassKind::F => self.t_f,
            PassKind::B => self.t_b,
            PassKind::W => self.t_w,
        }
    }

    /// F + B + W: the per-microbatch work one stage performs per chunk.
    pub fn pass_sum(&self) -> TimeUs {
        self.t_f + self.t_b + self.t_w
    }

    /// Durations divided by `v` (for per-chunk times of a v-chunk placement).
    /// Rounds down; callers that need exactness should pass times divisible
    /// by `v`.
    pub fn split(&self, v: i64) -> Profile {
        Profile {
            t_f: TimeUs(self.t_f.0 / v),
            t_b: TimeUs(self.t_b.0 / v),
            t_w: TimeUs(self.t_w.0 / v),
            t_comm: self.t_comm,
        }
    }
}

/// Per-stage activation memory accounting, in abstract units.
///
/// A forward retains `m_b` until its B runs; the B converts that into the
/// `m_w` the weight pass still needs; the W releases it. Like `Profile`, the
/// quantities are per chunk pass.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MemoryModel {
    /// Held from F start until B completes.
    pub m_b: i64,
    /// Held from B completion until W completes.
    pub m_w: i64,
    /// Per-stage cap on concurrently held units, if any.
    pub m_limit: Option<i64>,
}

impl MemoryModel {
    pub fn new(m_b: i64, m_w: i64, m_limit: Option<i64>) -> MemoryModel {
        MemoryModel { m_b, m_w, m_limit }
    }

    /// Unbounded variant of `self`.
    pub fn unlimited(self) -> MemoryModel {
        MemoryModel { m_limit: None, ..self }
    }

    /// Net level change when a pass completes (F charges at start instead;
    /// see the simulator's trace semantics).
    pub fn delta(&self, kind: PassKind) -> i64 {
        match kind {
            PassKind::F => self.m_b,
            PassKind::B => self.m_w - self.m_b,
            PassKind::W => -self.m_w,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_cancel_over_a_microbatch() {
        let mm = MemoryModel::new(39, 32, None);
        let total: i64 = PassKind::ALL.iter().map(|&k| mm.delta(k)).sum();
        assert_eq!(total, 0, "a completed microbatch must release all memory");
    }
}
