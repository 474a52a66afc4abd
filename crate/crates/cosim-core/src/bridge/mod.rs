//! Local communication interface between the simulator endpoint and the
//! management system.
//!
//! Workflow per cycle: poll the bound measurement signals over Modbus,
//! synchronize the simulation clock from the embedded `sim_time` register,
//! log and retain the latest values, forward them to the management system
//! as a measurement frame, and continuously accept command frames going the
//! other way, logging each one and writing it through to the command
//! registers.
//!
//! [`BridgeCore`] holds the protocol-independent behavior (logging,
//! latest-value retention, clock sync, command dispositions) so the same
//! logic runs in two harnesses: the realtime [`run`] loop with real Modbus
//! and framed-socket connections on threads, and the virtual-time scenario
//! scheduler, which drives the core directly.

mod log;

pub use log::{replay_log, BridgeLog, Direction, ReplayedLog};

use std::collections::BTreeMap;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::modbus::{ModbusClient, ModbusError};
use crate::time::{SimClock, SimTime, TimestampedSample};
use crate::transport::{
    Frame, FrameKind, FramedReceiver, FramedSender, FramedSocket, TransportError,
};

pub const SIM_TIME_SIGNAL: &str = "sim_time";

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("bridge config invalid: {0}")]
    Config(String),
    #[error("modbus: {0}")]
    Modbus(#[from] ModbusError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One named signal and the base address of its register pair.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SignalBinding {
    pub signal: String,
    pub base: u16,
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub modbus_endpoint: String,
    pub mcs_endpoint: String,
    pub poll_period: Duration,
    /// `None` forwards right after each completed poll; `Some` runs an
    /// independent forwarding cadence (the flows are decoupled).
    pub forward_period: Option<Duration>,
    pub measurements: Vec<SignalBinding>,
    pub commands: Vec<SignalBinding>,
    pub log_path: PathBuf,
    pub jsonl: bool,
    pub modbus_timeout: Duration,
    pub unit_id: u8,
    pub bridge_id: String,
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.poll_period.is_zero() {
            return Err(BridgeError::Config("poll_period must be positive".into()));
        }
        if self.forward_period.is_some_and(|p| p.is_zero()) {
            return Err(BridgeError::Config(
                "forward_period must be positive".into(),
            ));
        }
        if self.measurements.is_empty() {
            return Err(BridgeError::Config("no measurement signals bound".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BridgeCounters {
    pub poll_cycles: u64,
    pub polls_skipped: u64,
    pub forwards: u64,
    pub forward_failures: u64,
    pub commands_written: u64,
    pub commands_dropped: u64,
    pub malformed_frames: u64,
    pub reconnects: u64,
}

/// A command ready to be written through to the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandWrite {
    pub signal: String,
    pub base: u16,
    pub value: f64,
}

pub struct BridgeCore {
    cfg: BridgeConfig,
    log: BridgeLog,
    latest: BTreeMap<String, f64>,
    latest_stamp: SimTime,
    synced_sim: SimTime,
    has_sim_time_binding: bool,
    frame_seq: u64,
    pub counters: BridgeCounters,
}

impl BridgeCore {
    pub fn new(cfg: BridgeConfig) -> Result<Self, BridgeError> {
        cfg.validate()?;
        let has_sim_time_binding = cfg.measurements.iter().any(|b| b.signal == SIM_TIME_SIGNAL);
        let clock_source = if has_sim_time_binding {
            "register"
        } else {
            "local"
        };
        let log = BridgeLog::create(&cfg.log_path, cfg.jsonl, clock_source)?;
        Ok(BridgeCore {
            log,
            latest: BTreeMap::new(),
            latest_stamp: SimTime::ZERO,
            synced_sim: SimTime::ZERO,
            has_sim_time_binding,
            frame_seq: 0,
            counters: BridgeCounters::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.cfg
    }

    pub fn has_sim_time_binding(&self) -> bool {
        self.has_sim_time_binding
    }

    /// Synchronize the bridge's notion of simulation time from the
    /// embedded time register (seconds); falls back to the local clock
    /// when the register is absent. Never moves backwards.
    pub fn sync_sim_time(&mut self, register_secs: Option<f32>, fallback: SimTime) -> SimTime {
        let t = match register_secs {
            Some(secs) if self.has_sim_time_binding => {
                SimTime::from_micros((secs as f64 * 1e6).round().max(0.0) as u64)
            }
            _ => fallback,
        };
        if t > self.synced_sim {
            self.synced_sim = t;
        }
        self.synced_sim
    }

    pub fn synced_sim_time(&self) -> SimTime {
        self.synced_sim
    }

    /// Log one completed poll cycle and retain the values for forwarding.
    pub fn record_poll(
        &mut self,
        values: &[(String, f64)],
        sim: SimTime,
        wall: Option<DateTime<Utc>>,
    ) -> Result<(), BridgeError> {
        for (signal, value) in values {
            self.log
                .append(Direction::Up, wall, sim, signal, *value, "polled")?;
            self.latest.insert(signal.clone(), *value);
        }
        self.latest_stamp = sim;
        self.counters.poll_cycles += 1;
        Ok(())
    }

    /// Latest-value measurement frame for the management system. The
    /// embedded time signal is clock plumbing and is not forwarded.
    pub fn build_forward_frame(&mut self, send_time: SimTime) -> Option<Frame> {
        let samples: Vec<TimestampedSample> = self
            .latest
            .iter()
            .filter(|(sig, _)| sig.as_str() != SIM_TIME_SIGNAL)
            .map(|(sig, v)| TimestampedSample {
                signal_id: sig.clone(),
                sim_time: self.latest_stamp,
                wall_time: None,
                value: *v,
            })
            .collect();
        if samples.is_empty() {
            return None;
        }
        self.frame_seq += 1;
        Some(
            Frame::new(
                FrameKind::Measurement,
                self.frame_seq,
                self.cfg.bridge_id.clone(),
                send_time,
                samples,
            )
            .expect("non-empty samples"),
        )
    }

    /// Split a command frame into writable commands and unbound leftovers.
    pub fn plan_command_writes(&self, frame: &Frame) -> (Vec<CommandWrite>, Vec<(String, f64)>) {
        let mut writes = Vec::new();
        let mut unbound = Vec::new();
        for s in &frame.samples {
            match self.cfg.commands.iter().find(|b| b.signal == s.signal_id) {
                Some(b) => writes.push(CommandWrite {
                    signal: s.signal_id.clone(),
                    base: b.base,
                    value: s.value,
                }),
                None => unbound.push((s.signal_id.clone(), s.value)),
            }
        }
        (writes, unbound)
    }

    /// Record a command's final outcome. Every received command goes
    /// through here exactly once: written or dropped, never silent.
    pub fn log_command(
        &mut self,
        signal: &str,
        value: f64,
        sim: SimTime,
        wall: Option<DateTime<Utc>>,
        disposition: &str,
    ) -> Result<(), BridgeError> {
        self.log
            .append(Direction::Down, wall, sim, signal, value, disposition)?;
        if disposition == "written" {
            self.counters.commands_written += 1;
        } else {
            self.counters.commands_dropped += 1;
        }
        Ok(())
    }

    /// Record a frame that could not be attributed to signals at all.
    pub fn log_malformed(
        &mut self,
        sim: SimTime,
        wall: Option<DateTime<Utc>>,
        reason: &str,
    ) -> Result<(), BridgeError> {
        self.counters.malformed_frames += 1;
        self.log.event(wall, sim, reason)
    }

    pub fn flush(&mut self) -> Result<(), BridgeError> {
        self.log.flush()
    }
}

pub struct BridgeHandle {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    core: Arc<Mutex<BridgeCore>>,
}

impl BridgeHandle {
    pub fn core(&self) -> Arc<Mutex<BridgeCore>> {
        self.core.clone()
    }

    pub fn counters(&self) -> BridgeCounters {
        self.core.lock().unwrap().counters
    }

    /// Graceful stop: join both flows and flush the log.
    pub fn stop(mut self) -> BridgeCounters {
        self.stop.store(true, Ordering::Release);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let mut core = self.core.lock().unwrap();
        let _ = core.flush();
        core.counters
    }
}

/// Start the realtime bridge: an upstream poller and a downstream command
/// handler on their own threads, connected to real endpoints. Both flows
/// retry with backoff and never stall each other; the shared core is only
/// locked for in-memory work, never across network waits.
pub fn run(cfg: BridgeConfig, clock: SimClock) -> Result<BridgeHandle, BridgeError> {
    let forward_period = cfg.forward_period;
    let core = Arc::new(Mutex::new(BridgeCore::new(cfg.clone())?));
    let stop = Arc::new(AtomicBool::new(false));
    let mcs_tx: Arc<Mutex<Option<FramedSender>>> = Arc::new(Mutex::new(None));

    let mut threads = Vec::new();

    {
        let core = core.clone();
        let stop = stop.clone();
        let mcs_tx = mcs_tx.clone();
        let clock = clock.clone();
        let cfg = cfg.clone();
        threads.push(std::thread::spawn(move || {
            upstream_loop(&cfg, &core, &stop, &mcs_tx, &clock);
        }));
    }
    {
        let core = core.clone();
        let stop = stop.clone();
        let mcs_tx = mcs_tx.clone();
        let clock = clock.clone();
        let cfg = cfg.clone();
        threads.push(std::thread::spawn(move || {
            downstream_loop(&cfg, &core, &stop, &mcs_tx, &clock);
        }));
    }
    if let Some(period) = forward_period {
        let core = core.clone();
        let stop = stop.clone();
        let mcs_tx = mcs_tx.clone();
        let clock = clock.clone();
        threads.push(std::thread::spawn(move || {
            forward_loop(period, &core, &stop, &mcs_tx, &clock);
        }));
    }

    Ok(BridgeHandle {
        stop,
        threads,
        core,
    })
}

/// Sleep to a deadline with a short spin finish, to keep poll cadence
/// jitter well under a tenth of the period.
fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let rem = deadline - now;
        if rem > Duration::from_millis(2) {
            std::thread::sleep(rem - Duration::from_millis(1));
        } else {
            std::hint::spin_loop();
        }
    }
}

fn backoff_sleep(attempt: u32, stop: &AtomicBool) {
    let ms = (50u64 << attempt.min(5)).min(1_000);
    let deadline = Instant::now() + Duration::from_millis(ms);
    while Instant::now() < deadline && !stop.load(Ordering::Acquire) {
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn upstream_loop(
    cfg: &BridgeConfig,
    core: &Mutex<BridgeCore>,
    stop: &AtomicBool,
    mcs_tx: &Mutex<Option<FramedSender>>,
    clock: &SimClock,
) {
    let mut client: Option<ModbusClient> = None;
    let mut attempt = 0u32;
    let mut next = Instant::now();
    let coupled_forward = cfg.forward_period.is_none();

    while !stop.load(Ordering::Acquire) {
        if client.is_none() {
            match ModbusClient::connect(&cfg.modbus_endpoint, cfg.unit_id, cfg.modbus_timeout) {
                Ok(c) => {
                    client = Some(c);
                    attempt = 0;
                }
                Err(_) => {
                    backoff_sleep(attempt, stop);
                    attempt += 1;
                    next = Instant::now();
                    continue;
                }
            }
        }

        let cycle_outcome = poll_cycle(cfg, client.as_mut().unwrap(), core, clock);
        match cycle_outcome {
            PollOutcome::Ok(frame) => {
                if coupled_forward {
                    if let Some(frame) = frame {
                        send_frame(&frame, mcs_tx, core);
                    }
                }
            }
            PollOutcome::SkipCycle => {
                core.lock().unwrap().counters.polls_skipped += 1;
            }
            PollOutcome::Reconnect => {
                core.lock().unwrap().counters.polls_skipped += 1;
                client = None;
            }
        }

        next += cfg.poll_period;
        let now = Instant::now();
        if next < now {
            // Fell behind (e.g. during reconnect); realign instead of
            // bursting to catch up.
            next = now + cfg.poll_period;
        }
        sleep_until(next);
    }
}

enum PollOutcome {
    Ok(Option<Frame>),
    SkipCycle,
    Reconnect,
}

fn poll_cycle(
    cfg: &BridgeConfig,
    client: &mut ModbusClient,
    core: &Mutex<BridgeCore>,
    clock: &SimClock,
) -> PollOutcome {
    let mut values: Vec<(String, f64)> = Vec::with_capacity(cfg.measurements.len());
    let mut sim_reg: Option<f32> = None;
    for b in &cfg.measurements {
        match client.read_f32(b.base) {
            Ok(v) => {
                if b.signal == SIM_TIME_SIGNAL {
                    sim_reg = Some(v);
                }
                values.push((b.signal.clone(), v as f64));
            }
            Err(ModbusError::Timeout) | Err(ModbusError::Exception { .. }) => {
                return PollOutcome::SkipCycle;
            }
            Err(_) => return PollOutcome::Reconnect,
        }
    }
    let mut c = core.lock().unwrap();
    let sim = c.sync_sim_time(sim_reg, clock.now());
    let wall = clock.wall_now();
    if c.record_poll(&values, sim, wall).is_err() {
        return PollOutcome::SkipCycle;
    }
    let frame = if cfg.forward_period.is_none() {
        c.build_forward_frame(sim)
    } else {
        None
    };
    PollOutcome::Ok(frame)
}

fn send_frame(frame: &Frame, mcs_tx: &Mutex<Option<FramedSender>>, core: &Mutex<BridgeCore>) {
    let mut guard = mcs_tx.lock().unwrap();
    let ok = match guard.as_mut() {
        Some(tx) => tx.send(frame).is_ok(),
        None => false,
    };
    drop(guard);
    let mut c = core.lock().unwrap();
    if ok {
        c.counters.forwards += 1;
    } else {
        c.counters.forward_failures += 1;
    }
}

fn forward_loop(
    period: Duration,
    core: &Mutex<BridgeCore>,
    stop: &AtomicBool,
    mcs_tx: &Mutex<Option<FramedSender>>,
    clock: &SimClock,
) {
    let mut next = Instant::now() + period;
    while !stop.load(Ordering::Acquire) {
        sleep_until(next);
        next += period;
        let frame = core.lock().unwrap().build_forward_frame(clock.now());
        if let Some(frame) = frame {
            send_frame(&frame, mcs_tx, core);
        }
    }
}

fn downstream_loop(
    cfg: &BridgeConfig,
    core: &Mutex<BridgeCore>,
    stop: &AtomicBool,
    mcs_tx: &Mutex<Option<FramedSender>>,
    clock: &SimClock,
) {
    let mut rx: Option<FramedReceiver> = None;
    let mut writer: Option<ModbusClient> = None;
    let mut attempt = 0u32;
    let mut skipped_seen = 0u64;
    let mut ever_connected = false;

    while !stop.load(Ordering::Acquire) {
        if rx.is_none() {
            match FramedSocket::connect(&cfg.mcs_endpoint) {
                Ok(sock) => match sock.into_split() {
                    Ok((tx, r)) => {
                        *mcs_tx.lock().unwrap() = Some(tx);
                        rx = Some(r);
                        skipped_seen = 0;
                        if ever_connected {
                            core.lock().unwrap().counters.reconnects += 1;
                        }
                        ever_connected = true;
                        attempt = 0;
                    }
                    Err(_) => {
                        backoff_sleep(attempt, stop);
                        attempt += 1;
                        continue;
                    }
                },
                Err(_) => {
                    backoff_sleep(attempt, stop);
                    attempt += 1;
                    continue;
                }
            }
        }

        let frames = match rx.as_mut().unwrap().poll() {
            Ok(frames) => frames,
            Err(_) => {
                rx = None;
                *mcs_tx.lock().unwrap() = None;
                continue;
            }
        };

        let skipped_now = rx.as_ref().unwrap().skipped();
        if skipped_now > skipped_seen {
            let mut c = core.lock().unwrap();
            for _ in skipped_seen..skipped_now {
                let sim = c.synced_sim_time().max(clock.now());
                let _ = c.log_malformed(sim, clock.wall_now(), "undecodable_frame_dropped");
            }
            skipped_seen = skipped_now;
        }

        for frame in frames {
            handle_command_frame(&frame, core, &mut writer, cfg, clock);
        }

        std::thread::sleep(Duration::from_millis(2));
    }
}

fn handle_command_frame(
    frame: &Frame,
    core: &Mutex<BridgeCore>,
    writer: &mut Option<ModbusClient>,
    cfg: &BridgeConfig,
    clock: &SimClock,
) {
    let wall = clock.wall_now();
    if frame.kind != FrameKind::Command {
        let mut c = core.lock().unwrap();
        let sim = c.synced_sim_time().max(clock.now());
        let _ = c.log_malformed(sim, wall, "unexpected_frame_kind_dropped");
        return;
    }
    let (writes, unbound) = {
        let c = core.lock().unwrap();
        c.plan_command_writes(frame)
    };
    let sim = {
        let c = core.lock().unwrap();
        c.synced_sim_time().max(clock.now())
    };
    for (signal, value) in unbound {
        let mut c = core.lock().unwrap();
        let _ = c.log_command(&signal, value, sim, wall, "dropped_unbound");
    }
    for w in writes {
        if writer.is_none() {
            *writer =
                ModbusClient::connect(&cfg.modbus_endpoint, cfg.unit_id, cfg.modbus_timeout).ok();
        }
        let outcome = match writer.as_mut() {
            Some(client) => match client.write_f32(w.base, w.value as f32) {
                Ok(()) => "written",
                Err(ModbusError::Timeout) => "dropped_write_timeout",
                Err(_) => {
                    *writer = None;
                    "dropped_write_failed"
                }
            },
            None => "dropped_simulator_unreachable",
        };
        let mut c = core.lock().unwrap();
        let _ = c.log_command(&w.signal, w.value, sim, wall, outcome);
    }
}
