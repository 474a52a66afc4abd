//! Scenario runner: wires federates, transports, bridge, and
//! reconstructors according to a JSON config and emits a self-describing
//! run directory (traces, latency records, manifest).
//!
//! Three scenarios:
//!
//! - `local_lg`: sequential load-group energization on the simulator
//!   endpoint, sampled by the bridge at one-second polls and commanded by
//!   a schedule-driven management system;
//! - `fileshare_loadfollow`: two systems coupled through the shared-
//!   directory transport with injected cloud-sync delay, the follower
//!   mirroring the source's node powers;
//! - `vpn_td`: transmission/distribution coupling over a jittered
//!   low-latency link, running each configured reconstructor over the
//!   identical arrival schedule so their PLL traces are directly paired.
//!
//! In virtual mode (default, seed required) a run is a pure function of
//! `(config, seed)`: trace CSVs are byte-identical across repeats.

pub mod engine;
pub mod fileshare_lf;
pub mod local_lg;
pub mod output;
pub mod vpn_td;

pub use output::{read_manifest, RunDir, MANIFEST_NAME};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::BridgeError;
use crate::modbus::ModbusError;
use crate::signals::{SignalError, SmootherConfig, SmootherKind};
use crate::time::{ClockMode, StepConfig, TimeError};
use crate::transport::{LatencyModel, TransportError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Invalid configuration; the CLI maps this to exit code 2.
    #[error("config: {0}")]
    Config(String),
    /// Runtime fault; the CLI maps this to exit code 3.
    #[error("runtime: {0}")]
    Runtime(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Modbus(#[from] ModbusError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Time(#[from] TimeError),
}

/// Duration as integer microseconds in configs and traces.
pub mod serde_duration_us {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LocalLg,
    FileshareLoadfollow,
    VpnTd,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::LocalLg => "local_lg",
            ScenarioKind::FileshareLoadfollow => "fileshare_loadfollow",
            ScenarioKind::VpnTd => "vpn_td",
        }
    }
}

/// Timestep block of the scenario config, microsecond/second units chosen
/// to keep JSON readable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    #[serde(default = "default_ts_emt_us")]
    pub ts_emt_us: u64,
    /// Defaults per scenario: 1000 (local) or 10000 (remote).
    #[serde(default)]
    pub ts_phasor_us: Option<u64>,
    #[serde(default = "default_mcs_interval_s")]
    pub mcs_interval_s: f64,
}

fn default_ts_emt_us() -> u64 {
    100
}
fn default_mcs_interval_s() -> f64 {
    60.0
}

impl Default for StepSpec {
    fn default() -> Self {
        StepSpec {
            ts_emt_us: default_ts_emt_us(),
            ts_phasor_us: None,
            mcs_interval_s: default_mcs_interval_s(),
        }
    }
}

impl StepSpec {
    pub fn resolve(&self, scenario: ScenarioKind) -> Result<StepConfig, ScenarioError> {
        let phasor_us = self.ts_phasor_us.unwrap_or(match scenario {
            ScenarioKind::LocalLg => 1_000,
            _ => 10_000,
        });
        let cfg = StepConfig {
            ts_emt: Duration::from_micros(self.ts_emt_us),
            ts_phasor: Duration::from_micros(phasor_us),
            mcs_interval: Duration::from_secs_f64(self.mcs_interval_s),
        };
        cfg.validate()
            .map_err(|e| ScenarioError::Config(format!("step: {e}")))?;
        Ok(cfg)
    }
}

/// Fixed virtual-time latencies for the local interface legs, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalLegLatencies {
    #[serde(default = "d80")]
    pub modbus_request_us: u64,
    #[serde(default = "d120")]
    pub modbus_response_us: u64,
    #[serde(default = "d50")]
    pub iface_process_up_us: u64,
    #[serde(default = "d150")]
    pub iface_to_mcs_us: u64,
    #[serde(default = "d500")]
    pub mcs_compute_us: u64,
    #[serde(default = "d150")]
    pub mcs_to_iface_us: u64,
    #[serde(default = "d50")]
    pub iface_process_down_us: u64,
}

fn d50() -> u64 {
    50
}
fn d80() -> u64 {
    80
}
fn d120() -> u64 {
    120
}
fn d150() -> u64 {
    150
}
fn d500() -> u64 {
    500
}

impl Default for LocalLegLatencies {
    fn default() -> Self {
        LocalLegLatencies {
            modbus_request_us: d80(),
            modbus_response_us: d120(),
            iface_process_up_us: d50(),
            iface_to_mcs_us: d150(),
            mcs_compute_us: d500(),
            mcs_to_iface_us: d150(),
            iface_process_down_us: d50(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalOptions {
    #[serde(default = "default_poll_period_s")]
    pub poll_period_s: f64,
    /// Absent: forward right after each poll (coupled flows).
    #[serde(default)]
    pub forward_period_s: Option<f64>,
    #[serde(default = "default_base_load_w")]
    pub base_load_w: f64,
    #[serde(default = "default_group_power_w")]
    pub group_power_w: f64,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_first_group_at_s")]
    pub first_group_at_s: f64,
    #[serde(default = "default_group_interval_s")]
    pub group_interval_s: f64,
    #[serde(default)]
    pub legs: LocalLegLatencies,
    #[serde(default = "default_true")]
    pub write_ground_truth: bool,
}

fn default_poll_period_s() -> f64 {
    1.0
}
fn default_base_load_w() -> f64 {
    1.0e6
}
fn default_group_power_w() -> f64 {
    0.8e6
}
fn default_groups() -> usize {
    5
}
fn default_first_group_at_s() -> f64 {
    50.0
}
fn default_group_interval_s() -> f64 {
    100.0
}
fn default_true() -> bool {
    true
}

impl Default for LocalOptions {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults are complete")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpnOptions {
    #[serde(default)]
    pub transmission: crate::federates::TransmissionConfig,
    /// Latency model for the P/Q feedback direction; defaults to the
    /// forward model.
    #[serde(default)]
    pub feedback_latency: Option<LatencyModel>,
    #[serde(default = "default_p_nominal")]
    pub p_nominal_w: f64,
    #[serde(default = "default_q_nominal")]
    pub q_nominal_var: f64,
    /// Steady-state window for spike measurement, seconds (PLL locked, no
    /// fault discontinuity inside).
    #[serde(default = "default_spike_window")]
    pub spike_window_s: (f64, f64),
    /// Window around the fault transient for lag comparison, seconds.
    #[serde(default = "default_lag_window")]
    pub lag_window_s: (f64, f64),
}

fn default_p_nominal() -> f64 {
    3.0e6
}
fn default_q_nominal() -> f64 {
    0.9e6
}
fn default_spike_window() -> (f64, f64) {
    (0.5, 2.0)
}
fn default_lag_window() -> (f64, f64) {
    (1.9, 3.4)
}

impl Default for VpnOptions {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults are complete")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileshareOptions {
    #[serde(default = "default_publish_period_s")]
    pub publish_period_s: f64,
    #[serde(default = "default_publishes")]
    pub publishes: u64,
    #[serde(default = "default_signals_per_publish")]
    pub signals_per_publish: usize,
    #[serde(default = "default_watch_poll_s")]
    pub watch_poll_s: f64,
    /// Shared directory; default `<out>/share`.
    #[serde(default)]
    pub share_dir: Option<PathBuf>,
}

fn default_publish_period_s() -> f64 {
    60.0
}
fn default_publishes() -> u64 {
    10
}
fn default_signals_per_publish() -> usize {
    500
}
fn default_watch_poll_s() -> f64 {
    0.5
}

impl Default for FileshareOptions {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults are complete")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_mode")]
    pub mode: ClockMode,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub step: StepSpec,
    /// Injected transport latency; defaults per scenario (uniform
    /// 17-35 ms for vpn_td, triangular 1/2.5/8.5 s for fileshare).
    #[serde(default)]
    pub latency: Option<LatencyModel>,
    /// Reconstructors to run side by side (vpn_td).
    #[serde(default)]
    pub smoothers: Option<Vec<SmootherConfig>>,
    #[serde(default)]
    pub local: LocalOptions,
    #[serde(default)]
    pub vpn: VpnOptions,
    #[serde(default)]
    pub fileshare: FileshareOptions,
    #[serde(default = "default_histogram_bin_s")]
    pub histogram_bin_s: f64,
}

fn default_mode() -> ClockMode {
    ClockMode::Virtual
}
fn default_histogram_bin_s() -> f64 {
    0.5
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.mode == ClockMode::Virtual && self.seed.is_none() {
            return Err(ScenarioError::Config(
                "field `seed` is mandatory in virtual mode".into(),
            ));
        }
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d > 0.0) {
                return Err(ScenarioError::Config(format!(
                    "field `duration_s` must be positive, got {d}"
                )));
            }
        }
        self.step.resolve(self.scenario)?;
        if let Some(model) = &self.latency {
            model
                .validate()
                .map_err(|e| ScenarioError::Config(format!("field `latency`: {e}")))?;
        }
        if let Some(smoothers) = &self.smoothers {
            if smoothers.is_empty() {
                return Err(ScenarioError::Config(
                    "field `smoothers` must not be empty when present".into(),
                ));
            }
        }
        if self.local.poll_period_s <= 0.0 {
            return Err(ScenarioError::Config(
                "field `local.poll_period_s` must be positive".into(),
            ));
        }
        if self.fileshare.publish_period_s <= 0.0 || self.fileshare.watch_poll_s <= 0.0 {
            return Err(ScenarioError::Config(
                "fileshare periods must be positive".into(),
            ));
        }
        if self.fileshare.signals_per_publish == 0 {
            return Err(ScenarioError::Config(
                "field `fileshare.signals_per_publish` must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> Duration {
        let default_s = match self.scenario {
            ScenarioKind::LocalLg => 500.0,
            ScenarioKind::FileshareLoadfollow => {
                self.fileshare.publishes as f64 * self.fileshare.publish_period_s + 30.0
            }
            ScenarioKind::VpnTd => 5.0,
        };
        Duration::from_secs_f64(self.duration_s.unwrap_or(default_s))
    }

    pub fn latency_model(&self) -> LatencyModel {
        self.latency.unwrap_or(match self.scenario {
            ScenarioKind::VpnTd => LatencyModel::Uniform {
                lo_s: 0.017,
                hi_s: 0.035,
            },
            ScenarioKind::FileshareLoadfollow => LatencyModel::Triangular {
                lo_s: 1.0,
                mode_s: 2.5,
                hi_s: 8.5,
            },
            ScenarioKind::LocalLg => LatencyModel::Fixed { delay_s: 0.0 },
        })
    }

    pub fn smoother_set(&self) -> Vec<SmootherConfig> {
        self.smoothers.clone().unwrap_or_else(|| {
            vec![
                SmootherConfig::of_kind(SmootherKind::Zoh),
                SmootherConfig::of_kind(SmootherKind::Lpf),
                SmootherConfig::of_kind(SmootherKind::Extrap),
            ]
        })
    }
}

/// Outcome of a completed run.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub metrics: BTreeMap<String, serde_json::Value>,
}

/// Execute a scenario into `out_dir` (created if needed).
pub fn run(config: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    config.validate()?;
    log::info!(
        "running scenario {} in {:?} mode into {}",
        config.scenario.as_str(),
        config.mode,
        out_dir.display()
    );
    match config.scenario {
        ScenarioKind::LocalLg => local_lg::run(config, out_dir),
        ScenarioKind::VpnTd => vpn_td::run(config, out_dir),
        ScenarioKind::FileshareLoadfollow => fileshare_lf::run(config, out_dir),
    }
}

/// Format a float for CSV output (shortest round-trip form).
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
