//! Cooperative UWB localization for mobile ad-hoc networks.
//!
//! Pipeline per epoch: pick which pairs to range within a slot budget
//! ([`scheduler`]), range them with aggregated double-sided two-way ranging
//! ([`ranging`]), keep the subgraph whose relative geometry is unique
//! ([`topology`]), embed it ([`relloc`]) and anchor it to a global frame
//! ([`absloc`]). [`simulator`] drives the whole loop over a scenario.

pub mod absloc;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod ranging;
pub mod relloc;
pub mod scheduler;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
pub use geometry::{Point2, RigidTransform, Segment};
pub use topology::NodeId;
