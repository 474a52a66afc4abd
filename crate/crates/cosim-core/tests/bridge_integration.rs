//! Realtime bridge against live endpoints: write-through, outage
//! resilience, and upstream/downstream independence.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use cosim_core::bridge::{self, replay_log, BridgeConfig, SignalBinding};
use cosim_core::modbus::{self, BindingKind, RegisterMap};
use cosim_core::time::{SimClock, SimTime, TimestampedSample};
use cosim_core::transport::{Frame, FrameKind, FramedListener};

struct Stack {
    _server: modbus::ServerHandle,
    map: Arc<Mutex<RegisterMap>>,
    listener: FramedListener,
    cfg: BridgeConfig,
}

fn stack(dir: &std::path::Path, poll: Duration) -> Stack {
    let mut map = RegisterMap::new();
    map.bind("power", 0, BindingKind::Measurement).unwrap();
    map.bind("sp", 100, BindingKind::Command).unwrap();
    map.write_f32("power", 1.75e6).unwrap();
    let map = Arc::new(Mutex::new(map));
    let server = modbus::serve(map.clone(), "127.0.0.1:0").unwrap();
    let listener = FramedListener::bind("127.0.0.1:0").unwrap();
    let cfg = BridgeConfig {
        modbus_endpoint: server.addr().to_string(),
        mcs_endpoint: listener.local_addr().unwrap().to_string(),
        poll_period: poll,
        forward_period: None,
        measurements: vec![SignalBinding {
            signal: "power".into(),
            base: 0,
        }],
        commands: vec![SignalBinding {
            signal: "sp".into(),
            base: 100,
        }],
        log_path: dir.join("bridge_log.csv"),
        jsonl: true,
        modbus_timeout: Duration::from_millis(300),
        unit_id: 1,
        bridge_id: "iface".into(),
    };
    Stack {
        _server: server,
        map,
        listener,
        cfg,
    }
}

fn command_frame(seq: u64, signal: &str, value: f64) -> Frame {
    Frame::new(
        FrameKind::Command,
        seq,
        "mcs",
        SimTime::from_millis(seq),
        vec![TimestampedSample::new(signal, SimTime::from_millis(seq), value).unwrap()],
    )
    .unwrap()
}

#[test]
fn command_write_through_within_one_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(dir.path(), Duration::from_millis(100));
    let handle = bridge::run(s.cfg.clone(), SimClock::realtime()).unwrap();

    let mut mcs = s.listener.accept().unwrap();
    mcs.send(&command_frame(1, "sp", 0.8)).unwrap();

    let deadline = Instant::now() + Duration::from_secs(2);
    loop {
        let v = s.map.lock().unwrap().read_f32("sp").unwrap();
        if v == 0.8 {
            break;
        }
        assert!(
            Instant::now() < deadline,
            "write-through never landed, sp={v}"
        );
        std::thread::sleep(Duration::from_millis(5));
    }
    let counters = handle.stop();
    assert_eq!(counters.commands_written, 1);
    assert_eq!(counters.commands_dropped, 0);
}

#[test]
fn mcs_outage_leaves_upstream_unaffected_and_loses_no_commands() {
    let dir = tempfile::tempdir().unwrap();
    let poll = Duration::from_millis(100);
    let s = stack(dir.path(), poll);
    let started = Instant::now();
    let handle = bridge::run(s.cfg.clone(), SimClock::realtime()).unwrap();

    // Phase 1: connected MCS sends one command, then the connection dies.
    let mut mcs = s.listener.accept().unwrap();
    std::thread::sleep(Duration::from_millis(400));
    mcs.send(&command_frame(1, "sp", 0.8)).unwrap();
    std::thread::sleep(Duration::from_millis(300));
    drop(mcs); // outage begins

    std::thread::sleep(Duration::from_millis(1000));

    // Phase 2: MCS comes back; downstream must resume.
    let mut mcs2 = s.listener.accept().unwrap();
    std::thread::sleep(Duration::from_millis(200));
    mcs2.send(&command_frame(2, "sp", 0.25)).unwrap();
    let deadline = Instant::now() + Duration::from_secs(2);
    loop {
        if s.map.lock().unwrap().read_f32("sp").unwrap() == 0.25 {
            break;
        }
        assert!(Instant::now() < deadline, "downstream never resumed");
        std::thread::sleep(Duration::from_millis(5));
    }
    let elapsed = started.elapsed();
    let counters = handle.stop();

    // Upstream unaffected: one poll per period for the whole run,
    // including the outage window.
    let expected = elapsed.as_millis() as u64 / poll.as_millis() as u64;
    assert!(
        counters.poll_cycles + counters.polls_skipped >= expected.saturating_sub(2),
        "upstream stalled: {} cycles over {expected} periods",
        counters.poll_cycles
    );
    assert_eq!(
        counters.polls_skipped, 0,
        "polls were skipped during outage"
    );
    assert!(counters.reconnects >= 1, "no reconnect recorded");

    // No silent loss: both received commands in the log with dispositions.
    let jsonl = std::fs::read_to_string(dir.path().join("bridge_log.csv.jsonl")).unwrap();
    let written: Vec<&str> = jsonl
        .lines()
        .filter(|l| {
            l.contains("\"direction\":\"down\"") && l.contains("\"disposition\":\"written\"")
        })
        .collect();
    assert_eq!(
        written.len(),
        2,
        "expected 2 written commands, got:\n{jsonl}"
    );

    // Upstream log has no sequence gap and non-decreasing stamps.
    let replay = replay_log(&dir.path().join("bridge_log.csv")).unwrap();
    let power = &replay.up["power"];
    assert!(power.len() as u64 >= expected.saturating_sub(2));
    for series in replay.up.values().chain(replay.down.values()) {
        for w in series.windows(2) {
            assert!(w[1].0 >= w[0].0, "log sim_time regressed: {:?}", w);
        }
    }
}

#[test]
fn stalled_mcs_reader_does_not_disturb_poll_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let poll = Duration::from_millis(200);
    let s = stack(dir.path(), poll);
    let handle = bridge::run(s.cfg.clone(), SimClock::realtime()).unwrap();

    // Accept the bridge's connection and then never read from it.
    let _mcs = s.listener.accept().unwrap();
    std::thread::sleep(Duration::from_secs(3));
    handle.stop();

    // Poll instants from the log (local clock stamps, microseconds).
    let replay = replay_log(&dir.path().join("bridge_log.csv")).unwrap();
    let stamps: Vec<u64> = replay.up["power"]
        .iter()
        .map(|(t, _)| t.as_micros())
        .collect();
    assert!(stamps.len() >= 12, "too few polls: {}", stamps.len());
    let mut worst = 0i64;
    for w in stamps.windows(2) {
        let delta = (w[1] - w[0]) as i64 - poll.as_micros() as i64;
        worst = worst.max(delta.abs());
    }
    assert!(
        worst < poll.as_micros() as i64 / 10,
        "poll jitter {worst} us exceeds a tenth of the period"
    );
}
