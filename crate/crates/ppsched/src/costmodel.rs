//! First-order transformer cost model. Supplies the flop counts behind the
//! characteristic pass-time ordering (T_W < T_F < T_B) and the activation
//! footprints behind the schedule memory accounting. Everything is per layer
//! and per microbatch; schedules only consume the *ratios* and the two
//! activation quantities, so constant factors cancel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{MemoryModel, PassKind, Profile, TimeUs};

/// Shape of one transformer layer's workload for one microbatch.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TransformerConfig {
    /// Sequence length (s).
    pub seq_len: u64,
    /// Microbatch size (b).
    pub microbatch: u64,
    /// Hidden dimension (h).
    pub hidden: u64,
    /// Attention head count (a).
    pub heads: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostModelError {
    #[error("{0} must be at least 1")]
    ZeroField(&'static str),
    #[error("cost overflows 128-bit arithmetic for this configuration")]
    Overflow,
    #[error("derived memory quantity {0} exceeds the accounting range")]
    MemoryRange(u128),
}

impl TransformerConfig {
    pub fn new(seq_len: u64, microbatch: u64, hidden: u64, heads: u64) -> TransformerConfig {
        TransformerConfig { seq_len, microbatch, hidden, heads }
    }

    fn check(&self) -> Result<(), CostModelError> {
        for (value, name) in [
            (self.seq_len, "seq_len"),
            (self.microbatch, "microbatch"),
            (self.hidden, "hidden"),
            (self.heads, "heads"),
        ] {
            if value == 0 {
                return Err(CostModelError::ZeroField(name));
            }
        }
        Ok(())
    }
}

fn checked(sequence: impl IntoIterator<Item = Option<u128>>) -> Result<u128, CostModelError> {
    let mut acc: u128 = 0;
    for term in sequence {
        acc = acc
            .checked_add(term.ok_or(CostModelError::Overflow)?)
            .ok_or(CostModelError::Overflow)?;
    }
    Ok(acc)
}

/// Flops of one pass of `kind` through one layer:
///
/// * F: `s·b·h·(24h + 4s)` — the matmuls plus attention scores;
/// * B: `s·b·h·(24h + 8s)` — input gradients touch the attention twice;
/// * W: `24·s·b·h²` — weight gradients see no attention term at all.
///
/// B + W together cost exactly twice F, the classic backward/forward ratio;
/// the split is uneven, which is why B and W deserve separate slots in a
/// schedule.
pub fn flops(kind: PassKind, cfg: &TransformerConfig) -> Result<u128, CostModelError> {
    cfg.check()?;
    let s = cfg.seq_len as u128;
    let b = cfg.microbatch as u128;
    let h = cfg.hidden as u128;
    let sbh = checked([s.checked_mul(b)])?.checked_mul(h).ok_or(CostModelError::Overflow)?;
    let inner = match kind {
        PassKind::F => checked([h.checked_mul(24), s.checked_mul(4)])?,
        PassKind::B => checked([h.checked_mul(24), s.checked_mul(8)])?,
        PassKind::W => checked([h.checked_mul(24)])?,
    };
    sbh.checked_mul(inner).ok_or(CostModelError::Overflow)
}

/// Activation units a stage must retain until the given pass completes, per
/// layer and microbatch:
///
/// * until B: `s·b·(34h + 5·a·s)` — everything the input gradient rereads;
/// * until W: `32·s·b·h` — just the layer inputs the weight gradient needs;
/// * F retains nothing from before itself.
pub fn activation_units(kind: PassKind, cfg: &TransformerConfig) -> Result<u128, CostModelError> {
    cfg.check()?;
    let s = cfg.seq_len as u128;
    let b = cfg.microbatch as u128;
    let h = cfg.hidden as u128;
    let a = cfg.heads as u128;
    let sb = s.checked_mul(b).ok_or(CostModelError::Overflow)?;
    let inner = match kind {
        PassKind::F => return Ok(0),
        PassKind::B => checked([h.checked_mul(34), a.checked_mul(5).and_then(|x| x.checked_mul(s))])?,
        PassKind::W => checked([h.checked_mul(32)])?,
    };
    sb.checked_mul(inner).ok_or(CostModelError::Overflow)
}

/// Bundles the two activation quantities into the schedule accounting model
/// (no limit attached — callers pick their budget).
pub fn derive_memory_model(cfg: &TransformerConfig) -> Result<MemoryModel, CostModelError> {
    let m_b = activation_units(PassKind::B, cfg)?;
    let m_w = activation_units(PassKind::W, cfg)?;
    let fit = |v: u128| i64::try_from(v).map_err(|_| CostModelError::MemoryRange(v));
    Ok(MemoryModel::new(fit(m_b)?, fit(m_w)?, None))
}

/// Builds a profile from a measured forward time by scaling B and W with
/// their flop ratios (rounded to microseconds).
pub fn profile_from_forward(
    cfg: &TransformerConfig,
    t_f: TimeUs,
    t_comm: TimeUs,
) -> Result<Profile, CostModelError> {
    let f = flops(PassKind::F, cfg)? as f64;
    let b = flops(PassKind::B, cfg)? as f64;
    let w = flops(PassKind::W, cfg)? as f64;
    let scale = |ratio: f64| TimeUs::from_us((t_f.as_us() as f64 * ratio).round() as i64);
    Ok(Profile::new(t_f, scale(b / f), scale(w / f), t_comm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_config_pins_the_formulas() {
        let cfg = TransformerConfig::new(1, 1, 1, 1);
        assert_eq!(flops(PassKind::F, &cfg).unwrap(), 28);
        assert_eq!(flops(PassKind::B, &cfg).unwrap(), 32);
        assert_eq!(flops(PassKind::W, &cfg).unwrap(), 24);
        assert_eq!(activation_units(PassKind::F, &cfg).unwrap(), 0);
        assert_eq!(activation_units(PassKind::B, &cfg).unwrap(), 39);
        assert_eq!(activation_units(PassKind::W, &cfg).unwrap(), 32);
    }

    #[test]
    fn backward_halves_sum_to_twice_the_forward() {
        for s in [1u64, 7, 1024, 4096] {
            for h in [1u64, 64, 2304, 6144] {
                let cfg = TransformerConfig::new(s, 3, h, 24);
                let f = flops(PassKind::F, &cfg).unwrap();
                let b = flops(PassKind::B, &cfg).unwrap();
                let w = flops(PassKind::W, &cfg).unwrap();
                assert_eq!(b + w, 2 * f, "s={s} h={h}");
                assert!(w < f && f < b, "expected W < F < B at s={s} h={h}");
            }
        }
    }

    #[test]
    fn zero_fields_and_overflow_are_reported() {
        let cfg = TransformerConfig::new(0, 1, 1, 1);
        assert_eq!(flops(PassKind::F, &cfg), Err(CostModelError::ZeroField("seq_len")));
        let huge = TransformerConfig::new(u64::MAX, u64::MAX, u64::MAX, 1);
        assert_eq!(flops(PassKind::F, &huge), Err(CostModelError::Overflow));
    }

    #[test]
    fn memory_model_carries_the_activation_split() {
        let cfg = TransformerConfig::new(1024, 6, 2304, 24);
        let mm = derive_memory_model(&cfg).unwrap();
        assert_eq!(mm.m_b as u128, activation_units(PassKind::B, &cfg).unwrap());
        assert_eq!(mm.m_w as u128, activation_units(PassKind::W, &cfg).unwrap());
        assert!(mm.m_b > mm.m_w, "B must pin more activation than W");
        assert!(mm.m_limit.is_none());
    }

    #[test]
    fn profile_scaling_keeps_the_ordering() {
        let cfg = TransformerConfig::new(1024, 6, 2304, 24);
        let p = profile_from_forward(&cfg, TimeUs(10_000), TimeUs(500)).unwrap();
        assert!(p.t_w < p.t_f && p.t_f < p.t_b);
        assert_eq!(p.t_comm, TimeUs(500));
    }
}
