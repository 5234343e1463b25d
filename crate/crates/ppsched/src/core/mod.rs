//! Foundation types shared by every other module: fixed-point time, pass
//! identities, chunk placement, pass-time profiles, activation accounting,
//! and the schedule artifact with its validator and dependency derivation.

mod pass;
mod profile;
mod schedule;
mod time;
mod topology;

pub use pass::{PassKind, PassRef};
pub use profile::{MemoryModel, Profile};
pub use schedule::{
    dependency_edges, validate_schedule, DepEdge, PassIndexer, Schedule, ValidationReport,
    Violation,
};
pub use time::TimeUs;
pub use topology::{ChunkSlot, Topology, TopologyError};
