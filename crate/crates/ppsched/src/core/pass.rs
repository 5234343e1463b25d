//! Pass identities. A *pass* is one unit of stage work for one microbatch:
//! the forward (F), the input-gradient half of the backward (B), or the
//! weight-gradient half (W). Splitting the backward into B and W is what the
//! rest of the crate exploits: only B sits on the cross-stage dependency
//! chain, while W merely has to run after its own B on the same stage.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Kind of work a pass performs.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum PassKind {
    /// Forward computation; activations are retained for the backward.
    F,
    /// Backward with respect to the input; releases the forward activation,
    /// retains what the weight gradient needs.
    B,
    /// Backward with respect to the weights; releases the rest.
    W,
}

impl PassKind {
    pub const ALL: [PassKind; 3] = [PassKind::F, PassKind::B, PassKind::W];

    pub fn label(self) -> &'static str {
        match self {
            PassKind::F => "F",
            PassKind::B => "B",
            PassKind::W => "W",
        }
    }
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One scheduled pass on one stage.
///
/// `stage` and `microbatch` are 1-based. `chunk` is the stage-local model
/// chunk ordinal, also 1-based; schedules that place a single contiguous
/// model slice per stage use `chunk == 1` throughout.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct PassRef {
    pub stage: u32,
    pub microbatch: u32,
    pub kind: PassKind,
    pub chunk: u32,
}

impl PassRef {
    pub fn new(stage: u32, microbatch: u32, kind: PassKind, chunk: u32) -> PassRef {
        PassRef { stage, microbatch, kind, chunk }
    }
}

impl fmt::Display for PassRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.chunk == 1 {
            write!(f, "{}({},{})", self.kind, self.stage, self.microbatch)
        } else {
            write!(f, "{}({},{},c{})", self.kind, self.stage, self.microbatch, self.chunk)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_is_compact() {
        assert_eq!(PassRef::new(2, 7, PassKind::B, 1).to_string(), "B(2,7)");
        assert_eq!(PassRef::new(3, 1, PassKind::F, 2).to_string(), "F(3,1,c2)");
    }
}
