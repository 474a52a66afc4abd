//! File-sharing scenario: load following between two systems coupled
//! through the shared directory with injected cloud-sync delay.
//!
//! The source system publishes its node load powers on a fixed cadence;
//! the follower watches the share, mirrors the received powers as its own
//! load references, and records when each version became usable. No
//! commands flow back (one-directional, as in the load-following setup).

use std::collections::BTreeMap;

use std::path::Path;
use std::time::Duration;

use crate::federates::{Mcs, McsRule};
use crate::scenario::engine::{EventQueue, PRIO_MODEL, PRIO_OBSERVE};
use crate::scenario::{fmt_f64, RunDir, RunSummary, ScenarioConfig, ScenarioError};
use crate::time::{ClockMode, LatencyLedger, Leg, SimTime, TimestampedSample};
use crate::transport::{
    FileshareDelivery, FilesharePublisher, FileshareWatcher, Frame, FrameKind, SeqTracker,
};

pub const SOURCE_FILE: &str = "source_profile.csv";
pub const FOLLOWER_FILE: &str = "follower_profile.csv";
pub const DELAYS_FILE: &str = "delays.csv";
pub const LEDGER_FILE: &str = "ledger.csv";

pub const SOURCE_ID: &str = "source_sys";

/// Deterministic per-node load profile: a base level plus a slow sinusoid,
/// parameters derived from the node index.
fn node_power_w(node: usize, t: SimTime) -> f64 {
    let ts = t.as_secs_f64();
    let base = 50e3 * (1.0 + (node % 7) as f64);
    let amp = 0.1 * base;
    let period = 120.0 + (node % 13) as f64 * 30.0;
    let phase = node as f64 * 0.618;
    base + amp * (std::f64::consts::TAU * ts / period + phase).sin()
}

fn publish_frame(seq: u64, t: SimTime, signals: usize) -> Frame {
    let samples: Vec<TimestampedSample> = (0..signals)
        .map(|i| {
            TimestampedSample::new(format!("node_p_{i}"), t, node_power_w(i, t))
                .expect("finite node power")
        })
        .collect();
    Frame::new(FrameKind::Measurement, seq, SOURCE_ID, t, samples).expect("non-empty publish")
}

fn total_power(frame: &Frame) -> f64 {
    frame.samples.iter().map(|s| s.value).sum()
}

struct Recorder {
    source_rows: String,
    follower_rows: String,
    delay_rows: String,
    ledger: LatencyLedger,
    tracker: SeqTracker,
    delays_s: Vec<f64>,
    file_bytes: Vec<u64>,
    mirrored_commands: u64,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            source_rows: String::from("write_seq,sim_time_us,total_p_w,file_bytes\n"),
            follower_rows: String::from("sim_time_us,write_seq,total_p_w\n"),
            delay_rows: String::from(
                "write_seq,write_us,visible_us,observed_us,delay_injected_s,delay_observed_s,file_bytes\n",
            ),
            ledger: LatencyLedger::new(),
            tracker: SeqTracker::new(),
            delays_s: Vec::new(),
            file_bytes: Vec::new(),
            mirrored_commands: 0,
        }
    }

    fn on_publish(&mut self, seq: u64, t: SimTime, total: f64, bytes: u64) {
        self.source_rows.push_str(&format!(
            "{},{},{},{}\n",
            seq,
            t.as_micros(),
            fmt_f64(total),
            bytes
        ));
        self.file_bytes.push(bytes);
    }

    fn on_delivery(
        &mut self,
        d: &FileshareDelivery,
        observed_at: SimTime,
        mcs: &mut Mcs,
    ) -> Result<(), ScenarioError> {
        let injected = d.visible_at.since(d.write_sim_time).as_secs_f64();
        let observed = observed_at.since(d.write_sim_time).as_secs_f64();
        self.delays_s.push(injected);
        self.ledger
            .record(Leg::FileshareCycle, d.write_sim_time, d.visible_at)?;
        self.delay_rows.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            d.write_seq,
            d.write_sim_time.as_micros(),
            d.visible_at.as_micros(),
            observed_at.as_micros(),
            fmt_f64(injected),
            fmt_f64(observed),
            d.file_bytes
        ));
        for frame in &d.frames {
            self.tracker
                .observe(frame)
                .map_err(|e| ScenarioError::Runtime(e.to_string()))?;
            if let Some(cmd) = mcs
                .on_measurement(frame, observed_at)
                .map_err(|e| ScenarioError::Runtime(e.to_string()))?
            {
                // Load references applied locally at the follower.
                self.mirrored_commands += cmd.samples.len() as u64;
                self.follower_rows.push_str(&format!(
                    "{},{},{}\n",
                    observed_at.as_micros(),
                    d.write_seq,
                    fmt_f64(total_power(&cmd))
                ));
            }
        }
        Ok(())
    }
}

pub fn run(config: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    let share_dir = config
        .fileshare
        .share_dir
        .clone()
        .unwrap_or_else(|| out_dir.join("share"));
    std::fs::create_dir_all(&share_dir)?;

    match config.mode {
        ClockMode::Virtual => run_virtual(config, out_dir, &share_dir),
        ClockMode::Realtime => run_realtime(config, out_dir, &share_dir),
    }
}

enum Ev {
    Publish,
    WatchPoll,
}

fn run_virtual(
    config: &ScenarioConfig,
    out_dir: &Path,
    share_dir: &Path,
) -> Result<RunSummary, ScenarioError> {
    let seed = config.seed.expect("validated");
    let duration = config.duration();
    let end = SimTime::ZERO + duration;
    let model = config.latency_model();
    model.validate()?;

    let mut run_dir = RunDir::create(out_dir)?;
    let mut publisher = FilesharePublisher::new(share_dir, SOURCE_ID)?;
    let mut watcher = FileshareWatcher::new(share_dir, model, seed)?;
    let mut mcs = Mcs::new("remote_mcs", McsRule::LoadFollowing { signals: vec![] });
    let mut rec = Recorder::new();

    let publish_period = Duration::from_secs_f64(config.fileshare.publish_period_s);
    let watch_poll = Duration::from_secs_f64(config.fileshare.watch_poll_s);
    let mut published = 0u64;

    let mut queue: EventQueue<Ev> = EventQueue::new();
    queue.schedule(SimTime::ZERO + publish_period, PRIO_MODEL, Ev::Publish);
    queue.schedule(SimTime::ZERO + watch_poll, PRIO_OBSERVE, Ev::WatchPoll);

    while let Some((now, ev)) = queue.pop() {
        if now > end {
            break;
        }
        match ev {
            Ev::Publish => {
                published += 1;
                let frame = publish_frame(published, now, config.fileshare.signals_per_publish);
                let total = total_power(&frame);
                let receipt = publisher.publish(&[frame], now)?;
                rec.on_publish(receipt.write_seq, now, total, receipt.file_bytes);
                if published < config.fileshare.publishes {
                    queue.schedule(now + publish_period, PRIO_MODEL, Ev::Publish);
                }
            }
            Ev::WatchPoll => {
                for d in watcher.poll(now)? {
                    rec.on_delivery(&d, now, &mut mcs)?;
                }
                let next = now + watch_poll;
                if next <= end {
                    queue.schedule(next, PRIO_OBSERVE, Ev::WatchPoll);
                }
            }
        }
    }

    write_outputs(config, &mut run_dir, &rec)?;
    let metrics = metrics_of(&rec, &watcher, published);
    let manifest_path = run_dir.finalize(
        config.scenario.as_str(),
        "virtual",
        Some(seed),
        serde_json::to_value(config)?,
        metrics.clone(),
    )?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        manifest_path,
        metrics,
    })
}

fn write_outputs(
    _config: &ScenarioConfig,
    run_dir: &mut RunDir,
    rec: &Recorder,
) -> Result<(), ScenarioError> {
    run_dir.write_text(SOURCE_FILE, &rec.source_rows)?;
    run_dir.write_text(FOLLOWER_FILE, &rec.follower_rows)?;
    run_dir.write_text(DELAYS_FILE, &rec.delay_rows)?;
    run_dir.write_text(LEDGER_FILE, &rec.ledger.to_csv())?;
    Ok(())
}

fn metrics_of(
    rec: &Recorder,
    watcher: &FileshareWatcher,
    published: u64,
) -> BTreeMap<String, serde_json::Value> {
    let mut metrics = BTreeMap::new();
    let n = rec.delays_s.len();
    let (min, max, mean, in_band) = if n == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let min = rec.delays_s.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = rec
            .delays_s
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mean = rec.delays_s.iter().sum::<f64>() / n as f64;
        let in_band = rec
            .delays_s
            .iter()
            .filter(|d| (1.5..=4.0).contains(*d))
            .count() as f64
            / n as f64;
        (min, max, mean, in_band)
    };
    metrics.insert("publishes".into(), published.into());
    metrics.insert("deliveries".into(), n.into());
    metrics.insert("delay_min_s".into(), min.into());
    metrics.insert("delay_max_s".into(), max.into());
    metrics.insert("delay_mean_s".into(), mean.into());
    metrics.insert("delay_frac_1p5_to_4s".into(), in_band.into());
    metrics.insert("overwrite_gaps".into(), watcher.overwrite_gaps().into());
    metrics.insert("corrupt_files".into(), watcher.corrupt_count().into());
    metrics.insert("seq_gaps_observed".into(), rec.tracker.gaps().into());
    metrics.insert("mirrored_commands".into(), rec.mirrored_commands.into());
    let mean_bytes = if rec.file_bytes.is_empty() {
        0.0
    } else {
        rec.file_bytes.iter().sum::<u64>() as f64 / rec.file_bytes.len() as f64
    };
    metrics.insert("mean_file_bytes".into(), mean_bytes.into());
    metrics
}

fn run_realtime(
    config: &ScenarioConfig,
    out_dir: &Path,
    share_dir: &Path,
) -> Result<RunSummary, ScenarioError> {
    let duration = config.duration();
    let model = config.latency_model();
    model.validate()?;
    let seed = config.seed.unwrap_or(0);

    let mut run_dir = RunDir::create(out_dir)?;
    let clock = crate::time::SimClock::realtime();
    let mut publisher = FilesharePublisher::new(share_dir, SOURCE_ID)?;
    let mut watcher = FileshareWatcher::new(share_dir, model, seed)?;
    let mut mcs = Mcs::new("remote_mcs", McsRule::LoadFollowing { signals: vec![] });
    let mut rec = Recorder::new();

    let publish_period = Duration::from_secs_f64(config.fileshare.publish_period_s);
    let watch_poll = Duration::from_secs_f64(config.fileshare.watch_poll_s);
    let deadline = std::time::Instant::now() + duration;
    let mut next_publish = std::time::Instant::now() + publish_period;
    let mut next_poll = std::time::Instant::now() + watch_poll;
    let mut published = 0u64;

    while std::time::Instant::now() < deadline {
        let now_wall = std::time::Instant::now();
        if now_wall >= next_publish && published < config.fileshare.publishes {
            published += 1;
            let t = clock.now();
            let frame = publish_frame(published, t, config.fileshare.signals_per_publish);
            let total = total_power(&frame);
            let receipt = publisher.publish(&[frame], t)?;
            rec.on_publish(receipt.write_seq, t, total, receipt.file_bytes);
            next_publish += publish_period;
        }
        if now_wall >= next_poll {
            let t = clock.now();
            for d in watcher.poll(t)? {
                rec.on_delivery(&d, t, &mut mcs)?;
            }
            next_poll += watch_poll;
        }
        std::thread::sleep(Duration::from_millis(5));
    }

    write_outputs(config, &mut run_dir, &rec)?;
    let metrics = metrics_of(&rec, &watcher, published);
    let manifest_path = run_dir.finalize(
        config.scenario.as_str(),
        "realtime",
        config.seed,
        serde_json::to_value(config)?,
        metrics.clone(),
    )?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        manifest_path,
        metrics,
    })
}
