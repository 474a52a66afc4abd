//! Phasor-domain transmission source with fault injection.
//!
//! Emits voltage magnitude, phase angle, frequency and a feeder-switch
//! flag on the phasor grid. The profile is closed-form and synthetic: a
//! nominal operating point, a slow ambient frequency/voltage modulation
//! (so the downstream reconstruction problem stays non-trivial between
//! events), and an optional three-phase fault with residual voltage, a
//! damped post-event frequency swing, and exponential voltage recovery.

use std::f64::consts::TAU;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultSpec {
    pub start_s: f64,
    /// Fault duration in cycles of the nominal frequency (5 cycles at
    /// 60 Hz is 83.333 ms).
    pub cycles: f64,
    pub residual_v_pu: f64,
}

impl Default for FaultSpec {
    fn default() -> Self {
        FaultSpec {
            start_s: 2.0,
            cycles: 5.0,
            residual_v_pu: 0.4,
        }
    }
}

/// Slow ambient modulation of the operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmbientSpec {
    pub freq_amp_hz: f64,
    pub freq_period_s: f64,
    pub v_amp_pu: f64,
    pub v_period_s: f64,
}

impl Default for AmbientSpec {
    fn default() -> Self {
        AmbientSpec {
            freq_amp_hz: 0.05,
            freq_period_s: 3.3,
            v_amp_pu: 0.01,
            v_period_s: 4.7,
        }
    }
}

/// Damped frequency swing following the fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwingSpec {
    pub amp_hz: f64,
    pub freq_hz: f64,
    pub tau_s: f64,
}

impl Default for SwingSpec {
    fn default() -> Self {
        SwingSpec {
            amp_hz: 0.2,
            freq_hz: 1.5,
            tau_s: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransmissionConfig {
    pub v_nominal_pu: f64,
    pub f_nominal_hz: f64,
    #[serde(with = "crate::scenario::serde_duration_us")]
    pub step: Duration,
    pub fault: Option<FaultSpec>,
    pub ambient: AmbientSpec,
    pub swing: SwingSpec,
    /// Voltage recovery time constant after fault clearance.
    pub recovery_tau_s: f64,
}

impl Default for TransmissionConfig {
    fn default() -> Self {
        TransmissionConfig {
            v_nominal_pu: 1.0,
            f_nominal_hz: 60.0,
            step: Duration::from_millis(10),
            fault: Some(FaultSpec::default()),
            ambient: AmbientSpec::default(),
            swing: SwingSpec::default(),
            recovery_tau_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasorPoint {
    pub sim_time: SimTime,
    pub v_mag_pu: f64,
    pub phase_rad: f64,
    pub freq_hz: f64,
    pub switch_closed: bool,
}

pub struct Transmission {
    cfg: TransmissionConfig,
    phase: f64,
    last_t: Option<SimTime>,
}

impl Transmission {
    pub fn new(cfg: TransmissionConfig) -> Self {
        Transmission {
            cfg,
            phase: 0.0,
            last_t: None,
        }
    }

    pub fn config(&self) -> &TransmissionConfig {
        &self.cfg
    }

    pub fn fault_duration(&self) -> Option<Duration> {
        self.cfg
            .fault
            .map(|f| Duration::from_secs_f64(f.cycles / self.cfg.f_nominal_hz))
    }

    /// Frequency profile at time `t`, closed form.
    pub fn freq_at(&self, t: SimTime) -> f64 {
        let ts = t.as_secs_f64();
        let mut f = self.cfg.f_nominal_hz
            + self.cfg.ambient.freq_amp_hz * (TAU * ts / self.cfg.ambient.freq_period_s).sin();
        if let Some(fault) = self.cfg.fault {
            let dt = ts - fault.start_s;
            if dt > 0.0 {
                f -= self.cfg.swing.amp_hz
                    * (-dt / self.cfg.swing.tau_s).exp()
                    * (TAU * self.cfg.swing.freq_hz * dt).sin();
            }
        }
        f.clamp(55.0, 65.0)
    }

    /// Voltage magnitude profile at time `t`, closed form.
    ///
    /// The fault applies to samples strictly after its start instant and
    /// up to (and including) start + duration, so a stream sampled every
    /// `ts` carries `round(duration / ts)` faulted points.
    pub fn v_mag_at(&self, t: SimTime) -> f64 {
        let ts = t.as_secs_f64();
        let mut v = self.cfg.v_nominal_pu
            + self.cfg.ambient.v_amp_pu * (TAU * ts / self.cfg.ambient.v_period_s).sin();
        if let Some(fault) = self.cfg.fault {
            let dur = fault.cycles / self.cfg.f_nominal_hz;
            let end = fault.start_s + dur;
            if ts > fault.start_s && ts <= end {
                v = fault.residual_v_pu;
            } else if ts > end {
                let rec = ts - end;
                let dip = (self.cfg.v_nominal_pu - fault.residual_v_pu)
                    * (-rec / self.cfg.recovery_tau_s).exp();
                v -= dip;
            }
        }
        v.clamp(0.0, 1.5)
    }

    /// Whether the fault is applied at sample instant `t`.
    pub fn fault_active(&self, t: SimTime) -> bool {
        match self.cfg.fault {
            Some(fault) => {
                let ts = t.as_secs_f64();
                let end = fault.start_s + fault.cycles / self.cfg.f_nominal_hz;
                ts > fault.start_s && ts <= end
            }
            None => false,
        }
    }

    /// Produce the phasor sample for grid instant `t`. Calls must be made
    /// in time order; the phase angle is the running integral of the
    /// frequency profile.
    pub fn sample(&mut self, t: SimTime) -> PhasorPoint {
        if let Some(last) = self.last_t {
            debug_assert!(t >= last, "transmission sampled backwards");
            let dt = t.since(last).as_secs_f64();
            self.phase = (self.phase + TAU * self.freq_at(t) * dt).rem_euclid(TAU);
        }
        self.last_t = Some(t);
        PhasorPoint {
            sim_time: t,
            v_mag_pu: self.v_mag_at(t),
            phase_rad: self.phase,
            freq_hz: self.freq_at(t),
            switch_closed: true,
        }
    }
}
