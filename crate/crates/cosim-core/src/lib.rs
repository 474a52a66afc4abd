//! Communication middleware for distributed power-system co-simulation.
//!
//! The crate couples subsystems that run at different time resolutions
//! (microsecond waveform models, millisecond phasor models, minute-scale
//! management controllers) over three interchangeable transports:
//!
//! - a Modbus-TCP subset toward a real-time-simulator endpoint,
//! - length-prefixed framed TCP sockets between federates,
//! - a shared-directory file exchange with injected sync latency.
//!
//! Resolution mismatch between federates is handled by pluggable signal
//! reconstructors (zero-order hold, first-order low-pass, slope/error
//! extrapolation), and the effect of each reconstructor on downstream
//! phase-locked-loop frequency tracking can be measured with the built-in
//! scenario harness ([`scenario`]).
//!
//! Scenarios run on a virtual clock by default: every run is a
//! deterministic function of `(config, seed)`. A wall-bound realtime mode
//! drives the same components over real sockets and threads.
//!
//! The `parallel` feature (on by default) runs independent batch work --
//! side-by-side reconstructor simulations and cross-correlation lag scans
//! -- on a rayon pool; disabling it falls back to equivalent sequential
//! loops with identical results.

pub mod bridge;
pub mod federates;
pub mod modbus;
pub mod pll;
pub mod scenario;
pub mod signals;
pub mod time;
pub mod transport;

pub(crate) mod par;

pub use time::{SimClock, SimTime, TimestampedSample};
