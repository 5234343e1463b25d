//! Model-to-stage placement. A model is cut into `stages * chunks_per_stage`
//! contiguous chunks; `placement[g]` says which stage hosts global chunk
//! position `g` (1-based in the API) and which local chunk ordinal it gets
//! there. Data flows through positions `1..=G` in the forward and `G..=1` in
//! the backward, so the placement fully determines every cross-stage
//! dependency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stage hosting one global chunk position, with its stage-local ordinal.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ChunkSlot {
    pub stage: u32,
    pub chunk: u32,
}

/// Placement of model chunks onto pipeline stages.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Topology {
    /// Number of pipeline stages (p ≥ 1).
    pub stages: u32,
    /// Number of microbatches per iteration (m ≥ 1).
    pub microbatches: u32,
    /// Model chunks hosted by each stage (c ≥ 1; 1 for plain pipelines).
    pub chunks_per_stage: u32,
    /// `placement[g-1]` is the slot of global chunk position g.
    pub placement: Vec<ChunkSlot>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("stage count must be at least 1")]
    NoStages,
    #[error("microbatch count must be at least 1")]
    NoMicrobatches,
    #[error("placement must cover every (stage, chunk) slot exactly once; {0}")]
    BadPlacement(String),
    #[error("interleaved placement needs chunks_per_stage >= 1")]
    BadChunkCount,
}

impl Topology {
    /// One contiguous model slice per stage, in pipeline order.
    pub fn linear(stages: u32, microbatches: u32) -> Topology {
        let placement = (1..=stages).map(|s| ChunkSlot { stage: s, chunk: 1 }).collect();
        Topology { stages, microbatches, chunks_per_stage: 1, placement }
    }

    /// Cyclic placement: position g sits on stage ((g-1) mod p) + 1. With v
    /// chunks per stage this is the layout interleaved pipeline schedules use.
    pub fn interleaved(stages: u32, microbatches: u32, chunks_per_stage: u32) -> Topology {
        let total = stages * chunks_per_stage;
        let placement = (0..total)
            .map(|g| ChunkSlot { stage: g % stages + 1, chunk: g / stages + 1 })
            .collect();
        Topology { stages, microbatches, chunks_per_stage, placement }
    }

    /// V-shaped placement with two chunks per stage: positions 1..=p run down
    /// the stages and positions p+1..=2p run back up, so stage i hosts
    /// positions i and 2p+1-i. The last stage hosts two adjacent positions,
    /// which keeps the backward's turnaround on one device.
    pub fn vee(stages: u32, microbatches: u32) -> Topology {
        let p = stages;
        let mut placement = Vec::with_capacity(2 * p as usize);
        for g in 1..=p {
            placement.push(ChunkSlot { stage: g, chunk: 1 });
        }
        for g in p + 1..=2 * p {
            placement.push(ChunkSlot { stage: 2 * p + 1 - g, chunk: 2 });
        }
        Topology { stages, microbatches, chunks_per_stage: 2, placement }
    }

    /// Total number of global chunk positions.
    pub fn positions(&self) -> u32 {
        self.stages * self.chunks_per_stage
    }

    /// Slot of global position g (1-based). Panics if out of range.
    pub fn slot(&self, position: u32) -> ChunkSlot {
        self.placement[(position - 1) as usize]
    }

    /// Global position of (stage, chunk), both 1-based.
    pub fn position_of(&self, stage: u32, chunk: u32) -> Option<u32> {
        self.placement
            .iter()
            .position(|s| s.stage == stage && s.chunk == chunk)
            .map(|idx| idx as u32 + 1)
    }

    /// Checks the placement covers every (stage, chunk) slot exactly once.
    pub fn check(&self) -> Result<(), TopologyError> {
        if self.stages == 0 {
            return Err(TopologyError::NoStages);
        }
        if self.microbatches == 0 {
            return Err(TopologyError::NoMicrobatches);
        }
        if self.chunks_per_stage == 0 {
            return Err(TopologyError::BadChunkCount);
        }
        let total = self.positions() as usize;
        if self.placement.len() != total {
            return Err(TopologyError::BadPlacement(format!(
                "expected {} positions, found {}",
                total,
                self.placement.len()
            )));
        }
        let mut seen = vec![false; total];
        for slot in &self.placement {
            if slot.stage == 0
                || slot.stage > self.stages
                || slot.chunk == 0
                || slot.chunk > self.chunks_per_stage
            {
                return Err(TopologyError::BadPlacement(format!(
                    "slot (stage {}, chunk {}) out of range",
                    slot.stage, slot.chunk
                )));
            }
            let idx = ((slot.stage - 1) * self.chunks_per_stage + (slot.chunk - 1)) as usize;
            if seen[idx] {
                return Err(TopologyError::BadPlacement(format!(
                    "slot (stage {}, chunk {}) placed twice",
                    slot.stage, slot.chunk
                )));
            }
            seen[idx] = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_identity() {
        let t = Topology::linear(4, 8);
        t.check().unwrap();
        assert_eq!(t.positions(), 4);
        assert_eq!(t.slot(3), ChunkSlot { stage: 3, chunk: 1 });
        assert_eq!(t.position_of(3, 1), Some(3));
    }

    #[test]
    fn interleaved_cycles_through_stages() {
        let t = Topology::interleaved(4, 8, 2);
        t.check().unwrap();
        // Positions 1..4 are chunk 1 of stages 1..4, positions 5..8 chunk 2.
        assert_eq!(t.slot(5), ChunkSlot { stage: 1, chunk: 2 });
        assert_eq!(t.slot(8), ChunkSlot { stage: 4, chunk: 2 });
    }

    #[test]
    fn vee_folds_back() {
        let t = Topology::vee(4, 8);
        t.check().unwrap();
        assert_eq!(t.slot(4), ChunkSlot { stage: 4, chunk: 1 });
        assert_eq!(t.slot(5), ChunkSlot { stage: 4, chunk: 2 });
        assert_eq!(t.slot(8), ChunkSlot { stage: 1, chunk: 2 });
    }

    #[test]
    fn check_rejects_double_placement() {
        let mut t = Topology::linear(2, 1);
        t.placement[1] = ChunkSlot { stage: 1, chunk: 1 };
        assert!(matches!(t.check(), Err(TopologyError::BadPlacement(_))));
    }
}
