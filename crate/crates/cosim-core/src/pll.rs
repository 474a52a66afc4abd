//! Synchronous-reference-frame phase-locked loop.
//!
//! Estimates phase and frequency of a three-phase voltage by driving the
//! q-axis projection to zero with a PI loop. Coarse or stair-stepped input
//! (a reconstructed waveform whose phase slope jumps at every coarse
//! update) shows up directly as spikes in the frequency estimate, which is
//! what the scenario harness measures when comparing reconstructors.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum PllError {
    #[error("non-finite input rejected")]
    NonFinite,
    #[error("dt must be positive, got {0}")]
    InvalidDt(f64),
}

/// Instantaneous three-phase voltage sample, in per unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePhaseSample {
    pub va: f64,
    pub vb: f64,
    pub vc: f64,
    pub sim_time: SimTime,
}

impl ThreePhaseSample {
    /// Balanced positive-sequence set of magnitude `v_mag` at phase `theta`.
    pub fn balanced(theta: f64, v_mag: f64, sim_time: SimTime) -> Self {
        ThreePhaseSample {
            va: v_mag * theta.cos(),
            vb: v_mag * (theta - 2.0 * PI / 3.0).cos(),
            vc: v_mag * (theta + 2.0 * PI / 3.0).cos(),
            sim_time,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.va.is_finite() && self.vb.is_finite() && self.vc.is_finite()
    }
}

/// q-axis projection of a three-phase sample at rotor angle `theta`.
///
/// Zero when `theta` aligns with the positive-sequence phase; for a small
/// misalignment `delta` it is approximately `V * delta`.
pub fn park_q(sample: &ThreePhaseSample, theta: f64) -> f64 {
    let s_a = theta.sin();
    let s_b = (theta - 2.0 * PI / 3.0).sin();
    let s_c = (theta + 2.0 * PI / 3.0).sin();
    -(2.0 / 3.0) * (sample.va * s_a + sample.vb * s_b + sample.vc * s_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllConfig {
    pub kp: f64,
    pub ki: f64,
    pub f_nominal_hz: f64,
}

impl Default for PllConfig {
    /// PI gains from the standard second-order design at 1 pu input:
    /// `kp = 2*zeta*wn`, `ki = wn^2` with `zeta = 0.707`, `wn = 2*pi*20`.
    /// Settles in roughly 0.1 s, fast enough to expose tens-of-ms update
    /// roughness in the input.
    fn default() -> Self {
        let wn = TAU * 20.0;
        PllConfig {
            kp: 2.0 * 0.707 * wn,
            ki: wn * wn,
            f_nominal_hz: 60.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pll {
    cfg: PllConfig,
    /// Rotor angle, wrapped to [0, 2*pi).
    theta: f64,
    /// Current angular frequency estimate, rad/s.
    omega: f64,
    /// Integral term of the PI, rad/s.
    integrator: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllOutput {
    pub theta: f64,
    pub freq_hz: f64,
}

impl Pll {
    pub fn new(cfg: PllConfig) -> Self {
        let omega = TAU * cfg.f_nominal_hz;
        Pll {
            cfg,
            theta: 0.0,
            omega,
            integrator: 0.0,
        }
    }

    /// One PI update on the q-error followed by phase integration.
    pub fn step(&mut self, sample: &ThreePhaseSample, dt: f64) -> Result<PllOutput, PllError> {
        if !sample.is_finite() {
            return Err(PllError::NonFinite);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(PllError::InvalidDt(dt));
        }
        let q = park_q(sample, self.theta);
        self.integrator += self.cfg.ki * q * dt;
        self.omega = TAU * self.cfg.f_nominal_hz + self.cfg.kp * q + self.integrator;
        self.theta = (self.theta + self.omega * dt).rem_euclid(TAU);
        Ok(PllOutput {
            theta: self.theta,
            freq_hz: self.omega / TAU,
        })
    }

    pub fn freq_hz(&self) -> f64 {
        self.omega / TAU
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}
