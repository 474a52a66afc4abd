//! Synthetic microgrid running on the simulator endpoint.
//!
//! Stands in for the real-time simulator in the local scenario: a base
//! load plus switchable load groups, with small closed-form voltage and
//! frequency transients on each energization. Every tick it refreshes its
//! measurement registers (including the embedded simulation time that the
//! bridge synchronizes on) and reads back command registers written by
//! the management system.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::modbus::{BindingKind, ModbusError, RegisterMap};
use crate::time::SimTime;

pub const SIGNAL_SIM_TIME: &str = "sim_time";
pub const SIGNAL_VOLTAGE: &str = "pcc_voltage";
pub const SIGNAL_FREQUENCY: &str = "frequency";
pub const SIGNAL_POWER: &str = "total_power";

/// Register layout: measurements from address 0, commands from 100.
pub const MEASUREMENT_BASE: u16 = 0;
pub const COMMAND_BASE: u16 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridRtsConfig {
    #[serde(with = "crate::scenario::serde_duration_us")]
    pub tick: Duration,
    pub base_load_w: f64,
    /// Power added by each load group when energized.
    pub group_power_w: f64,
    pub groups: usize,
    pub v_nominal_pu: f64,
    pub f_nominal_hz: f64,
    /// Voltage dip per energization event, recovering exponentially.
    pub v_dip_pu: f64,
    pub f_dip_hz: f64,
    pub transient_tau_s: f64,
}

impl Default for MicrogridRtsConfig {
    fn default() -> Self {
        MicrogridRtsConfig {
            tick: Duration::from_millis(1),
            base_load_w: 1.0e6,
            group_power_w: 0.8e6,
            groups: 5,
            v_nominal_pu: 1.0,
            f_nominal_hz: 60.0,
            v_dip_pu: 0.02,
            f_dip_hz: 0.05,
            transient_tau_s: 1.5,
        }
    }
}

/// One row of the high-resolution ground-truth trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthPoint {
    pub sim_time: SimTime,
    pub v_pu: f64,
    pub f_hz: f64,
    pub p_w: f64,
}

pub struct MicrogridRts {
    cfg: MicrogridRtsConfig,
    on: Vec<bool>,
    /// Energization instants, for the transient shapes.
    events: Vec<SimTime>,
}

impl MicrogridRts {
    pub fn new(cfg: MicrogridRtsConfig) -> Self {
        MicrogridRts {
            on: vec![false; cfg.groups],
            events: Vec::new(),
            cfg,
        }
    }

    pub fn group_signal(k: usize) -> String {
        format!("lg_{k}")
    }

    pub fn measurement_signals() -> Vec<&'static str> {
        vec![
            SIGNAL_SIM_TIME,
            SIGNAL_VOLTAGE,
            SIGNAL_FREQUENCY,
            SIGNAL_POWER,
        ]
    }

    /// Install this federate's register bindings into `map`.
    pub fn bind_registers(&self, map: &mut RegisterMap) -> Result<(), ModbusError> {
        for (i, sig) in Self::measurement_signals().iter().enumerate() {
            map.bind(
                *sig,
                MEASUREMENT_BASE + 2 * i as u16,
                BindingKind::Measurement,
            )?;
        }
        for k in 0..self.cfg.groups {
            map.bind(
                Self::group_signal(k),
                COMMAND_BASE + 2 * k as u16,
                BindingKind::Command,
            )?;
        }
        Ok(())
    }

    /// Advance one tick: pick up commands, update measurements.
    pub fn tick(&mut self, t: SimTime, map: &mut RegisterMap) -> GroundTruthPoint {
        for k in 0..self.cfg.groups {
            if !self.on[k] {
                let commanded = map
                    .read_f32(&Self::group_signal(k))
                    .map(|v| v >= 0.5)
                    .unwrap_or(false);
                if commanded {
                    self.on[k] = true;
                    self.events.push(t);
                }
            }
        }

        let p = self.cfg.base_load_w
            + self.on.iter().filter(|&&o| o).count() as f64 * self.cfg.group_power_w;

        let mut v = self.cfg.v_nominal_pu;
        let mut f = self.cfg.f_nominal_hz;
        for &te in &self.events {
            let age = t.since(te).as_secs_f64();
            let decay = (-age / self.cfg.transient_tau_s).exp();
            v -= self.cfg.v_dip_pu * decay;
            f -= self.cfg.f_dip_hz * decay;
        }

        map.write_f32(SIGNAL_SIM_TIME, t.as_secs_f64() as f32)
            .expect("sim_time register bound");
        map.write_f32(SIGNAL_VOLTAGE, v as f32)
            .expect("voltage register bound");
        map.write_f32(SIGNAL_FREQUENCY, f as f32)
            .expect("frequency register bound");
        map.write_f32(SIGNAL_POWER, p as f32)
            .expect("power register bound");

        GroundTruthPoint {
            sim_time: t,
            v_pu: v,
            f_hz: f,
            p_w: p,
        }
    }

    pub fn energized(&self) -> usize {
        self.on.iter().filter(|&&o| o).count()
    }

    pub fn config(&self) -> &MicrogridRtsConfig {
        &self.cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_staircase_follows_commands() {
        let cfg = MicrogridRtsConfig::default();
        let mut rts = MicrogridRts::new(cfg);
        let mut map = RegisterMap::new();
        rts.bind_registers(&mut map).unwrap();

        let p0 = rts.tick(SimTime::from_millis(1), &mut map).p_w;
        assert_eq!(p0, 1.0e6);

        map.write_f32("lg_0", 1.0).unwrap();
        let p1 = rts.tick(SimTime::from_millis(2), &mut map).p_w;
        assert_eq!(p1, 1.8e6);

        map.write_f32("lg_3", 1.0).unwrap();
        let p2 = rts.tick(SimTime::from_millis(3), &mut map).p_w;
        assert_eq!(p2, 2.6e6);
        assert_eq!(rts.energized(), 2);
    }

    #[test]
    fn registers_reflect_tick_state() {
        let mut rts = MicrogridRts::new(MicrogridRtsConfig::default());
        let mut map = RegisterMap::new();
        rts.bind_registers(&mut map).unwrap();
        let gt = rts.tick(SimTime::from_secs(3), &mut map);
        assert_eq!(map.read_f32(SIGNAL_POWER).unwrap(), gt.p_w as f32);
        assert_eq!(map.read_f32(SIGNAL_SIM_TIME).unwrap(), 3.0);
    }

    #[test]
    fn energization_transient_decays() {
        let mut rts = MicrogridRts::new(MicrogridRtsConfig::default());
        let mut map = RegisterMap::new();
        rts.bind_registers(&mut map).unwrap();
        map.write_f32("lg_0", 1.0).unwrap();
        let just_after = rts.tick(SimTime::from_secs(10), &mut map);
        assert!(just_after.v_pu < 1.0);
        let later = rts.tick(SimTime::from_secs(30), &mut map);
        assert!((later.v_pu - 1.0).abs() < 1e-5);
        assert!((later.f_hz - 60.0).abs() < 1e-4);
    }
}
