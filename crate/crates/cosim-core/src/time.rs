//! Simulation clock, time stamping, and latency bookkeeping.
//!
//! All timing in the co-simulation is expressed as [`SimTime`]: microseconds
//! since scenario start on the embedded simulation clock that acts as the
//! global clock for every federate. The clock runs in one of two modes:
//!
//! - **virtual** (default): time advances only when the scenario scheduler
//!   advances it, so runs are deterministic and can be accelerated far past
//!   wall speed;
//! - **realtime**: simulation time is slaved to the wall clock, for runs
//!   against real sockets and threads.
//!
//! Per-leg communication delays are collected in a [`LatencyLedger`] and can
//! be decomposed into a per-leg breakdown whose sum matches the end-to-end
//! duration exactly when the legs were produced under the virtual clock.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Microseconds since scenario start on the co-simulation's global clock.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Duration since an earlier instant. Panics in debug builds if
    /// `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> Duration {
        debug_assert!(self.0 >= earlier.0, "negative duration: {self} - {earlier}");
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }

    pub fn checked_sub(self, earlier: SimTime) -> Option<Duration> {
        self.0.checked_sub(earlier.0).map(Duration::from_micros)
    }
}

impl std::ops::Add<Duration> for SimTime {
    type Output = SimTime;
    fn add(self, d: Duration) -> SimTime {
        SimTime(self.0 + d.as_micros() as u64)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// One signal value stamped with simulation time and, in realtime mode,
/// the wall-clock instant it was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampedSample {
    pub signal_id: String,
    pub sim_time: SimTime,
    pub wall_time: Option<DateTime<Utc>>,
    pub value: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimeError {
    #[error("signal id must be non-empty")]
    EmptySignalId,
    #[error("sample value must be finite")]
    NonFiniteValue,
    #[error("receive time {recv} precedes send time {send}")]
    ClockViolation { send: SimTime, recv: SimTime },
    #[error("step config invalid: {0}")]
    InvalidStepConfig(String),
    #[error("latency ledger does not cover one complete cycle: {0}")]
    IncompleteCycle(String),
}

impl TimestampedSample {
    pub fn new(
        signal_id: impl Into<String>,
        sim_time: SimTime,
        value: f64,
    ) -> Result<Self, TimeError> {
        let signal_id = signal_id.into();
        if signal_id.is_empty() {
            return Err(TimeError::EmptySignalId);
        }
        if !value.is_finite() {
            return Err(TimeError::NonFiniteValue);
        }
        Ok(TimestampedSample {
            signal_id,
            sim_time,
            wall_time: None,
            value,
        })
    }

    pub fn with_wall_time(mut self, wall: DateTime<Utc>) -> Self {
        self.wall_time = Some(wall);
        self
    }
}

/// Timestep configuration of the coupled waveform/phasor pair plus the
/// management-system dispatch interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Waveform-domain (EMT) step. Default 100 us.
    pub ts_emt: Duration,
    /// Phasor-domain step. Default 1 ms local, 10 ms remote.
    pub ts_phasor: Duration,
    /// Management-system dispatch interval, at most 5 minutes.
    pub mcs_interval: Duration,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            ts_emt: Duration::from_micros(100),
            ts_phasor: Duration::from_millis(1),
            mcs_interval: Duration::from_secs(60),
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<(), TimeError> {
        if self.ts_emt.is_zero() || self.ts_phasor.is_zero() || self.mcs_interval.is_zero() {
            return Err(TimeError::InvalidStepConfig(
                "all steps must be positive".into(),
            ));
        }
        if self.ts_emt >= self.ts_phasor {
            return Err(TimeError::InvalidStepConfig(format!(
                "ts_emt {:?} must be shorter than ts_phasor {:?}",
                self.ts_emt, self.ts_phasor
            )));
        }
        if !self
            .ts_phasor
            .as_micros()
            .is_multiple_of(self.ts_emt.as_micros())
        {
            return Err(TimeError::InvalidStepConfig(
                "ts_phasor must be an integer multiple of ts_emt".into(),
            ));
        }
        if self.mcs_interval > Duration::from_secs(300) {
            return Err(TimeError::InvalidStepConfig(
                "mcs_interval must not exceed 5 minutes".into(),
            ));
        }
        Ok(())
    }
}

/// Worst-case propagation delay of a value crossing the phasor/EMT boundary:
/// two phasor steps (compute + exchange) plus one EMT step to take effect.
pub fn propagation_bound(cfg: &StepConfig) -> Duration {
    2 * cfg.ts_phasor + cfg.ts_emt
}

/// One leg of the measurement/command round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    RtsToIface,
    IfaceProcessUp,
    IfaceToMcs,
    McsCompute,
    McsToIface,
    IfaceProcessDown,
    IfaceToRts,
    FileshareCycle,
    SocketOneway,
}

impl Leg {
    pub fn as_str(&self) -> &'static str {
        match self {
            Leg::RtsToIface => "rts_to_iface",
            Leg::IfaceProcessUp => "iface_process_up",
            Leg::IfaceToMcs => "iface_to_mcs",
            Leg::McsCompute => "mcs_compute",
            Leg::McsToIface => "mcs_to_iface",
            Leg::IfaceProcessDown => "iface_process_down",
            Leg::IfaceToRts => "iface_to_rts",
            Leg::FileshareCycle => "fileshare_cycle",
            Leg::SocketOneway => "socket_oneway",
        }
    }

    pub fn parse(s: &str) -> Option<Leg> {
        Some(match s {
            "rts_to_iface" => Leg::RtsToIface,
            "iface_process_up" => Leg::IfaceProcessUp,
            "iface_to_mcs" => Leg::IfaceToMcs,
            "mcs_compute" => Leg::McsCompute,
            "mcs_to_iface" => Leg::McsToIface,
            "iface_process_down" => Leg::IfaceProcessDown,
            "iface_to_rts" => Leg::IfaceToRts,
            "fileshare_cycle" => Leg::FileshareCycle,
            "socket_oneway" => Leg::SocketOneway,
            _ => return None,
        })
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One recorded communication leg: send stamp, receive stamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub leg: Leg,
    pub send: SimTime,
    pub recv: SimTime,
}

impl LatencyRecord {
    pub fn latency(&self) -> Duration {
        self.recv.since(self.send)
    }
}

/// Append-only store of latency records, kept ordered by receive stamp.
///
/// Appends must go through a single writer; records are plain values and
/// can be handed between threads freely.
#[derive(Debug, Default, Clone)]
pub struct LatencyLedger {
    records: Vec<LatencyRecord>,
}

impl LatencyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one leg. Rejects `recv < send` as a clock violation.
    pub fn record(
        &mut self,
        leg: Leg,
        send: SimTime,
        recv: SimTime,
    ) -> Result<LatencyRecord, TimeError> {
        if recv < send {
            return Err(TimeError::ClockViolation { send, recv });
        }
        let rec = LatencyRecord { leg, send, recv };
        // Keep the ledger ordered by recv even if legs are reported late.
        let pos = self.records.partition_point(|r| r.recv <= recv);
        self.records.insert(pos, rec);
        Ok(rec)
    }

    pub fn records(&self) -> &[LatencyRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Records for one leg kind, in recv order.
    pub fn for_leg(&self, leg: Leg) -> impl Iterator<Item = &LatencyRecord> {
        self.records.iter().filter(move |r| r.leg == leg)
    }

    /// CSV export with columns `leg,send_us,recv_us,latency_us`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("leg,send_us,recv_us,latency_us\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.leg,
                r.send.as_micros(),
                r.recv.as_micros(),
                r.latency().as_micros()
            ));
        }
        out
    }

    /// Parse the CSV produced by [`LatencyLedger::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, TimeError> {
        let mut ledger = LatencyLedger::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let leg = parts
                .next()
                .and_then(Leg::parse)
                .ok_or_else(|| TimeError::IncompleteCycle(format!("bad leg on line {}", i + 1)))?;
            let send: u64 = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| TimeError::IncompleteCycle(format!("bad send on line {}", i + 1)))?;
            let recv: u64 = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| TimeError::IncompleteCycle(format!("bad recv on line {}", i + 1)))?;
            ledger.record(leg, SimTime::from_micros(send), SimTime::from_micros(recv))?;
        }
        Ok(ledger)
    }
}

/// Per-leg delay sums for one communication cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayBreakdown {
    /// Summed duration per leg kind, in first-occurrence order.
    pub per_leg: Vec<(Leg, Duration)>,
    /// Sum of all leg durations.
    pub leg_total: Duration,
    /// First send to last receive.
    pub end_to_end: Duration,
    /// Idle time between consecutive legs (zero under the virtual clock).
    pub gap: Duration,
}

/// Decompose a ledger covering one cycle into per-leg sums.
///
/// The records, ordered by send stamp, must form a sequential cycle: each
/// leg starts no earlier than the previous one ended. Overlapping legs or
/// an empty ledger are reported as an incomplete cycle rather than summed
/// into a misleading total. Under the virtual clock consecutive legs abut,
/// so `leg_total == end_to_end` exactly.
pub fn decompose(ledger: &LatencyLedger) -> Result<DelayBreakdown, TimeError> {
    if ledger.is_empty() {
        return Err(TimeError::IncompleteCycle("ledger is empty".into()));
    }
    let mut recs: Vec<LatencyRecord> = ledger.records().to_vec();
    recs.sort_by_key(|r| (r.send, r.recv));

    let mut per_leg: Vec<(Leg, Duration)> = Vec::new();
    let mut leg_total = Duration::ZERO;
    let mut gap = Duration::ZERO;
    let mut prev_recv: Option<SimTime> = None;
    for r in &recs {
        if let Some(prev) = prev_recv {
            if r.send < prev {
                return Err(TimeError::IncompleteCycle(format!(
                    "leg {} starting at {} overlaps previous leg ending at {}",
                    r.leg, r.send, prev
                )));
            }
            gap += r.send.since(prev);
        }
        let dur = r.latency();
        leg_total += dur;
        match per_leg.iter_mut().find(|(l, _)| *l == r.leg) {
            Some((_, d)) => *d += dur,
            None => per_leg.push((r.leg, dur)),
        }
        prev_recv = Some(r.recv);
    }
    let end_to_end = recs.last().unwrap().recv.since(recs.first().unwrap().send);
    Ok(DelayBreakdown {
        per_leg,
        leg_total,
        end_to_end,
        gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Virtual,
    Realtime,
}

#[derive(Debug)]
enum ClockInner {
    Virtual {
        now_us: AtomicU64,
    },
    Realtime {
        started: Instant,
        started_utc: DateTime<Utc>,
    },
}

/// The scenario's global clock. Cheap to clone; all handles observe the
/// same time. Reads are safe from any thread and never go backwards.
#[derive(Debug, Clone)]
pub struct SimClock {
    inner: Arc<ClockInner>,
}

impl SimClock {
    /// Virtual clock starting at zero; advanced explicitly by the scheduler.
    pub fn virtual_clock() -> Self {
        SimClock {
            inner: Arc::new(ClockInner::Virtual {
                now_us: AtomicU64::new(0),
            }),
        }
    }

    /// Clock slaved to the wall clock, zero at creation.
    pub fn realtime() -> Self {
        SimClock {
            inner: Arc::new(ClockInner::Realtime {
                started: Instant::now(),
                started_utc: Utc::now(),
            }),
        }
    }

    pub fn mode(&self) -> ClockMode {
        match &*self.inner {
            ClockInner::Virtual { .. } => ClockMode::Virtual,
            ClockInner::Realtime { .. } => ClockMode::Realtime,
        }
    }

    pub fn now(&self) -> SimTime {
        match &*self.inner {
            ClockInner::Virtual { now_us } => SimTime(now_us.load(Ordering::Acquire)),
            ClockInner::Realtime { started, .. } => SimTime(started.elapsed().as_micros() as u64),
        }
    }

    /// Wall-clock instant corresponding to `now()`. `None` in virtual mode.
    pub fn wall_now(&self) -> Option<DateTime<Utc>> {
        match &*self.inner {
            ClockInner::Virtual { .. } => None,
            ClockInner::Realtime {
                started,
                started_utc,
            } => Some(
                *started_utc + chrono::Duration::from_std(started.elapsed()).unwrap_or_default(),
            ),
        }
    }

    /// Advance a virtual clock to `t`. Never moves time backwards; a target
    /// in the past leaves the clock untouched. No-op on a realtime clock.
    pub fn advance_to(&self, t: SimTime) {
        if let ClockInner::Virtual { now_us } = &*self.inner {
            now_us.fetch_max(t.0, Ordering::AcqRel);
        }
    }

    /// Stamp a value with the current simulation (and, in realtime mode,
    /// wall) time.
    pub fn stamp(
        &self,
        signal_id: impl Into<String>,
        value: f64,
    ) -> Result<TimestampedSample, TimeError> {
        let mut s = TimestampedSample::new(signal_id, self.now(), value)?;
        s.wall_time = self.wall_now();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(phasor_us: u64, emt_us: u64) -> StepConfig {
        StepConfig {
            ts_emt: Duration::from_micros(emt_us),
            ts_phasor: Duration::from_micros(phasor_us),
            mcs_interval: Duration::from_secs(60),
        }
    }

    #[test]
    fn propagation_bound_local_config() {
        // 2 * 1 ms + 100 us
        assert_eq!(
            propagation_bound(&cfg(1_000, 100)),
            Duration::from_micros(2_100)
        );
    }

    #[test]
    fn propagation_bound_remote_config() {
        assert_eq!(
            propagation_bound(&cfg(10_000, 100)),
            Duration::from_micros(20_100)
        );
    }

    #[test]
    fn propagation_bound_zero_emt_step() {
        let c = cfg(1_000, 0);
        assert_eq!(propagation_bound(&c), Duration::from_micros(2_000));
    }

    #[test]
    fn propagation_bound_is_linear_in_phasor_step() {
        for a in [250u64, 1_000, 10_000] {
            let f_a = propagation_bound(&cfg(a, 100));
            let f_2a = propagation_bound(&cfg(2 * a, 100));
            assert_eq!(f_2a - f_a, Duration::from_micros(2 * a));
        }
    }

    #[test]
    fn step_config_validation() {
        assert!(cfg(1_000, 100).validate().is_ok());
        assert!(cfg(100, 100).validate().is_err());
        assert!(cfg(1_000, 300).validate().is_err()); // not an integer multiple
        let mut c = cfg(1_000, 100);
        c.mcs_interval = Duration::from_secs(301);
        assert!(c.validate().is_err());
    }

    #[test]
    fn record_leg_latency() {
        let mut ledger = LatencyLedger::new();
        let r = ledger
            .record(
                Leg::IfaceToMcs,
                SimTime::from_micros(1000),
                SimTime::from_micros(1020),
            )
            .unwrap();
        assert_eq!(r.latency(), Duration::from_micros(20));
    }

    #[test]
    fn record_leg_twenty_ms_oneway() {
        let mut ledger = LatencyLedger::new();
        let r = ledger
            .record(
                Leg::SocketOneway,
                SimTime::ZERO,
                SimTime::from_micros(20_000),
            )
            .unwrap();
        assert_eq!(r.latency(), Duration::from_millis(20));
    }

    #[test]
    fn record_leg_rejects_negative_duration() {
        let mut ledger = LatencyLedger::new();
        let err = ledger
            .record(
                Leg::McsCompute,
                SimTime::from_micros(50),
                SimTime::from_micros(40),
            )
            .unwrap_err();
        assert!(matches!(err, TimeError::ClockViolation { .. }));
        assert!(ledger.is_empty());
    }

    #[test]
    fn ledger_ordered_by_recv() {
        let mut ledger = LatencyLedger::new();
        ledger
            .record(
                Leg::McsCompute,
                SimTime::from_micros(10),
                SimTime::from_micros(30),
            )
            .unwrap();
        ledger
            .record(
                Leg::RtsToIface,
                SimTime::from_micros(0),
                SimTime::from_micros(5),
            )
            .unwrap();
        let recvs: Vec<u64> = ledger
            .records()
            .iter()
            .map(|r| r.recv.as_micros())
            .collect();
        assert_eq!(recvs, vec![5, 30]);
    }

    #[test]
    fn decompose_sums_chained_legs() {
        // Legs of 5, 3, 7, 5 us laid end to end.
        let mut ledger = LatencyLedger::new();
        let legs = [
            (Leg::RtsToIface, 0u64, 5u64),
            (Leg::IfaceProcessUp, 5, 8),
            (Leg::IfaceToMcs, 8, 15),
            (Leg::McsCompute, 15, 20),
        ];
        for (leg, s, r) in legs {
            ledger
                .record(leg, SimTime::from_micros(s), SimTime::from_micros(r))
                .unwrap();
        }
        let b = decompose(&ledger).unwrap();
        assert_eq!(b.leg_total, Duration::from_micros(20));
        assert_eq!(b.end_to_end, Duration::from_micros(20));
        assert_eq!(b.gap, Duration::ZERO);
    }

    #[test]
    fn decompose_rejects_empty_ledger() {
        assert!(matches!(
            decompose(&LatencyLedger::new()),
            Err(TimeError::IncompleteCycle(_))
        ));
    }

    #[test]
    fn decompose_rejects_overlapping_legs() {
        let mut ledger = LatencyLedger::new();
        ledger
            .record(
                Leg::RtsToIface,
                SimTime::from_micros(0),
                SimTime::from_micros(10),
            )
            .unwrap();
        ledger
            .record(
                Leg::IfaceToMcs,
                SimTime::from_micros(5),
                SimTime::from_micros(20),
            )
            .unwrap();
        assert!(matches!(
            decompose(&ledger),
            Err(TimeError::IncompleteCycle(_))
        ));
    }

    #[test]
    fn decompose_reports_gaps() {
        let mut ledger = LatencyLedger::new();
        ledger
            .record(
                Leg::RtsToIface,
                SimTime::from_micros(0),
                SimTime::from_micros(10),
            )
            .unwrap();
        ledger
            .record(
                Leg::IfaceToMcs,
                SimTime::from_micros(15),
                SimTime::from_micros(25),
            )
            .unwrap();
        let b = decompose(&ledger).unwrap();
        assert_eq!(b.leg_total, Duration::from_micros(20));
        assert_eq!(b.end_to_end, Duration::from_micros(25));
        assert_eq!(b.gap, Duration::from_micros(5));
    }

    #[test]
    fn ledger_csv_round_trip() {
        let mut ledger = LatencyLedger::new();
        ledger
            .record(
                Leg::SocketOneway,
                SimTime::from_micros(7),
                SimTime::from_micros(19),
            )
            .unwrap();
        ledger
            .record(
                Leg::FileshareCycle,
                SimTime::from_micros(20),
                SimTime::from_micros(1_020),
            )
            .unwrap();
        let csv = ledger.to_csv();
        let back = LatencyLedger::from_csv(&csv).unwrap();
        assert_eq!(back.records(), ledger.records());
    }

    #[test]
    fn virtual_clock_is_monotone_across_threads() {
        let clock = SimClock::virtual_clock();
        let mut handles = Vec::new();
        for i in 0..4u64 {
            let c = clock.clone();
            handles.push(std::thread::spawn(move || {
                let mut last = SimTime::ZERO;
                for k in 0..1000u64 {
                    c.advance_to(SimTime::from_micros(i * 1000 + k));
                    let now = c.now();
                    assert!(now >= last);
                    last = now;
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn virtual_clock_never_goes_backwards_on_stale_advance() {
        let clock = SimClock::virtual_clock();
        clock.advance_to(SimTime::from_micros(100));
        clock.advance_to(SimTime::from_micros(50));
        assert_eq!(clock.now(), SimTime::from_micros(100));
    }

    #[test]
    fn wall_time_only_in_realtime_mode() {
        assert!(SimClock::virtual_clock().wall_now().is_none());
        assert!(SimClock::realtime().wall_now().is_some());
    }

    #[test]
    fn sample_validation() {
        assert!(TimestampedSample::new("", SimTime::ZERO, 1.0).is_err());
        assert!(TimestampedSample::new("v", SimTime::ZERO, f64::NAN).is_err());
        assert!(TimestampedSample::new("v", SimTime::ZERO, 1.0).is_ok());
    }
}
