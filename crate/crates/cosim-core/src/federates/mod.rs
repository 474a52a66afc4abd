//! Synthetic subsystems standing in for the hardware testbed.
//!
//! Each federate is a single-owner state machine stepped by the scenario
//! scheduler; federates talk to each other only through transports. The
//! models are deliberately reduced: closed-form voltage/frequency profiles
//! and a static v^2 load instead of network solvers, which keeps every
//! scenario a deterministic function of its seed while preserving the
//! signal shapes the communication layer has to carry.

pub mod distribution;
pub mod mcs;
pub mod rts;
pub mod transmission;

pub use distribution::{Distribution, DistributionConfig, DistributionTracePoint};
pub use mcs::{Mcs, McsRule};
pub use rts::{GroundTruthPoint, MicrogridRts, MicrogridRtsConfig};
pub use transmission::{PhasorPoint, Transmission, TransmissionConfig};
