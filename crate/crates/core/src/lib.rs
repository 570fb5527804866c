//! Simulation-feedback scenario fuzzing for driving agents.

pub mod agents;
pub mod error;
pub mod features;
pub mod feedback;
pub mod ga;
pub mod geometry;
pub mod harness;
pub mod map;
pub mod oracles;
pub mod scenario;
pub mod sdc;
pub mod sim;
pub mod vpm;

pub use error::{Error, Result};
