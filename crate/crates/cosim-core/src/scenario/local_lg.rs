//! Local scenario: sequential load-group energization, polled by the
//! bridge over Modbus and commanded by the schedule-driven management
//! system.
//!
//! Virtual mode runs the full exchange byte-for-byte through the Modbus
//! codec on a discrete-event schedule with fixed per-leg latencies, so
//! each command round trip produces a contiguous chain of latency records
//! whose sum equals its end-to-end duration exactly. Realtime mode wires
//! the same federates over real TCP and threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::bridge::{BridgeConfig, BridgeCore, SignalBinding, SIM_TIME_SIGNAL};
use crate::federates::rts::{MicrogridRts, MicrogridRtsConfig, COMMAND_BASE, MEASUREMENT_BASE};
use crate::federates::{Mcs, McsRule};
use crate::modbus::{codec, server::handle_frame, RegisterMap};
use crate::scenario::engine::{EventQueue, PRIO_EXCHANGE, PRIO_MODEL, PRIO_OBSERVE};
use crate::scenario::{fmt_f64, RunDir, RunSummary, ScenarioConfig, ScenarioError};
use crate::time::{ClockMode, LatencyLedger, Leg, SimTime};
use crate::transport::{Frame, FramedListener};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const BRIDGE_LOG_FILE: &str = "bridge_log.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const CYCLES_FILE: &str = "cycles.csv";

pub fn run(config: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    match config.mode {
        ClockMode::Virtual => run_virtual(config, out_dir),
        ClockMode::Realtime => run_realtime(config, out_dir),
    }
}

fn rts_config(config: &ScenarioConfig, tick: Duration) -> MicrogridRtsConfig {
    MicrogridRtsConfig {
        tick,
        base_load_w: config.local.base_load_w,
        group_power_w: config.local.group_power_w,
        groups: config.local.groups,
        ..MicrogridRtsConfig::default()
    }
}

fn bridge_config(
    config: &ScenarioConfig,
    out_dir: &Path,
    groups: usize,
    modbus_endpoint: String,
    mcs_endpoint: String,
) -> BridgeConfig {
    let mut measurements = Vec::new();
    for (i, sig) in MicrogridRts::measurement_signals().iter().enumerate() {
        measurements.push(SignalBinding {
            signal: sig.to_string(),
            base: MEASUREMENT_BASE + 2 * i as u16,
        });
    }
    let commands = (0..groups)
        .map(|k| SignalBinding {
            signal: MicrogridRts::group_signal(k),
            base: COMMAND_BASE + 2 * k as u16,
        })
        .collect();
    BridgeConfig {
        modbus_endpoint,
        mcs_endpoint,
        poll_period: Duration::from_secs_f64(config.local.poll_period_s),
        forward_period: config.local.forward_period_s.map(Duration::from_secs_f64),
        measurements,
        commands,
        log_path: out_dir.join(BRIDGE_LOG_FILE),
        jsonl: true,
        modbus_timeout: Duration::from_millis(1000),
        unit_id: 1,
        bridge_id: "local_iface".into(),
    }
}

fn schedule_rule(config: &ScenarioConfig) -> McsRule {
    McsRule::StepSchedule {
        start: SimTime::from_micros((config.local.first_group_at_s * 1e6) as u64),
        interval: Duration::from_secs_f64(config.local.group_interval_s),
        group_signals: (0..config.local.groups)
            .map(MicrogridRts::group_signal)
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// virtual mode
// ---------------------------------------------------------------------------

enum Ev {
    RtsTick,
    BridgePoll,
    ServeRead {
        request: Vec<u8>,
    },
    ClientRecv {
        reply: Vec<u8>,
        served_at: SimTime,
    },
    McsReceive {
        frame: Frame,
        cycle: Vec<(Leg, SimTime, SimTime)>,
    },
    CommandRecv {
        frame: Frame,
        cycle: Vec<(Leg, SimTime, SimTime)>,
    },
    ApplyWrites {
        requests: Vec<Vec<u8>>,
    },
}

fn run_virtual(config: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    let step = config.step.resolve(config.scenario)?;
    let duration = config.duration();
    let end = SimTime::ZERO + duration;
    let legs = config.local.legs;
    let seed = config.seed.expect("validated");

    let mut run_dir = RunDir::create(out_dir)?;
    let mut truth_writer = if config.local.write_ground_truth {
        let mut w = run_dir.writer(GROUND_TRUTH_FILE)?;
        writeln!(w, "sim_time_us,v_pu,f_hz,p_w")?;
        Some(w)
    } else {
        None
    };

    let map = Mutex::new({
        let mut m = RegisterMap::new();
        MicrogridRts::new(rts_config(config, step.ts_phasor)).bind_registers(&mut m)?;
        m
    });
    let mut rts = MicrogridRts::new(rts_config(config, step.ts_phasor));
    let mut mcs = Mcs::new("mcs", schedule_rule(config));
    let mut core = BridgeCore::new(bridge_config(
        config,
        out_dir,
        config.local.groups,
        "virtual".into(),
        "virtual".into(),
    ))?;
    run_dir.track(BRIDGE_LOG_FILE);
    run_dir.track(&format!("{BRIDGE_LOG_FILE}.jsonl"));

    let mut ledger = LatencyLedger::new();
    let mut cycles: Vec<Vec<(Leg, SimTime, SimTime)>> = Vec::new();
    let mut txn: u16 = 0;

    let mut queue: EventQueue<Ev> = EventQueue::new();
    queue.schedule(SimTime::ZERO, PRIO_MODEL, Ev::RtsTick);
    let poll_period = Duration::from_secs_f64(config.local.poll_period_s);
    queue.schedule(SimTime::ZERO + poll_period, PRIO_OBSERVE, Ev::BridgePoll);

    let measurement_qty = 2 * MicrogridRts::measurement_signals().len() as u16;

    // Cadence events stop rescheduling at `end`; in-flight exchange events
    // run to completion so the last poll's cycle is not cut short.
    while let Some((now, ev)) = queue.pop() {
        match ev {
            Ev::RtsTick => {
                let gt = rts.tick(now, &mut map.lock().unwrap());
                if let Some(w) = truth_writer.as_mut() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        gt.sim_time.as_micros(),
                        fmt_f64(gt.v_pu),
                        fmt_f64(gt.f_hz),
                        fmt_f64(gt.p_w)
                    )?;
                }
                let next = now + step.ts_phasor;
                if next <= end {
                    queue.schedule(next, PRIO_MODEL, Ev::RtsTick);
                }
            }
            Ev::BridgePoll => {
                txn = txn.wrapping_add(1);
                let request =
                    codec::encode_read_request(txn, 1, MEASUREMENT_BASE, measurement_qty)?;
                queue.schedule(
                    now + Duration::from_micros(legs.modbus_request_us),
                    PRIO_EXCHANGE,
                    Ev::ServeRead { request },
                );
                let next = now + poll_period;
                if next <= end {
                    queue.schedule(next, PRIO_OBSERVE, Ev::BridgePoll);
                }
            }
            Ev::ServeRead { request } => {
                let reply = handle_frame(&map, &request)
                    .ok_or_else(|| ScenarioError::Runtime("modbus serve failed".into()))?;
                queue.schedule(
                    now + Duration::from_micros(legs.modbus_response_us),
                    PRIO_EXCHANGE,
                    Ev::ClientRecv {
                        reply,
                        served_at: now,
                    },
                );
            }
            Ev::ClientRecv { reply, served_at } => {
                let (_, resp) = codec::decode_response(&reply)?;
                let registers = match resp {
                    codec::Response::ReadHoldingRegisters { registers } => registers,
                    other => {
                        return Err(ScenarioError::Runtime(format!(
                            "unexpected poll response {other:?}"
                        )))
                    }
                };
                let mut values = Vec::new();
                let mut sim_reg = None;
                for (i, sig) in MicrogridRts::measurement_signals().iter().enumerate() {
                    let v =
                        crate::modbus::registers_to_f32([registers[2 * i], registers[2 * i + 1]]);
                    if *sig == SIM_TIME_SIGNAL {
                        sim_reg = Some(v);
                    }
                    values.push((sig.to_string(), v as f64));
                }
                let sim = core.sync_sim_time(sim_reg, now);
                core.record_poll(&values, sim, None)?;

                let mut cycle = vec![(Leg::RtsToIface, served_at, now)];
                ledger.record(Leg::RtsToIface, served_at, now)?;

                let proc_done = now + Duration::from_micros(legs.iface_process_up_us);
                ledger.record(Leg::IfaceProcessUp, now, proc_done)?;
                cycle.push((Leg::IfaceProcessUp, now, proc_done));

                if let Some(frame) = core.build_forward_frame(proc_done) {
                    let mcs_recv = proc_done + Duration::from_micros(legs.iface_to_mcs_us);
                    ledger.record(Leg::IfaceToMcs, proc_done, mcs_recv)?;
                    cycle.push((Leg::IfaceToMcs, proc_done, mcs_recv));
                    queue.schedule(mcs_recv, PRIO_EXCHANGE, Ev::McsReceive { frame, cycle });
                    core.counters.forwards += 1;
                }
            }
            Ev::McsReceive { frame, mut cycle } => {
                let computed_at = now + Duration::from_micros(legs.mcs_compute_us);
                ledger.record(Leg::McsCompute, now, computed_at)?;
                cycle.push((Leg::McsCompute, now, computed_at));
                if let Some(cmd) = mcs
                    .on_measurement(&frame, computed_at)
                    .map_err(|e| ScenarioError::Runtime(e.to_string()))?
                {
                    let recv_at = computed_at + Duration::from_micros(legs.mcs_to_iface_us);
                    ledger.record(Leg::McsToIface, computed_at, recv_at)?;
                    cycle.push((Leg::McsToIface, computed_at, recv_at));
                    queue.schedule(
                        recv_at,
                        PRIO_EXCHANGE,
                        Ev::CommandRecv { frame: cmd, cycle },
                    );
                }
            }
            Ev::CommandRecv { frame, mut cycle } => {
                let (writes, unbound) = core.plan_command_writes(&frame);
                let sim = core.synced_sim_time();
                for (signal, value) in unbound {
                    core.log_command(&signal, value, sim, None, "dropped_unbound")?;
                }
                let proc_done = now + Duration::from_micros(legs.iface_process_down_us);
                ledger.record(Leg::IfaceProcessDown, now, proc_done)?;
                cycle.push((Leg::IfaceProcessDown, now, proc_done));
                let apply_at = proc_done + Duration::from_micros(legs.modbus_request_us);
                ledger.record(Leg::IfaceToRts, proc_done, apply_at)?;
                cycle.push((Leg::IfaceToRts, proc_done, apply_at));

                let mut requests = Vec::new();
                for w in &writes {
                    txn = txn.wrapping_add(1);
                    requests.push(codec::encode_write_request(
                        txn,
                        1,
                        w.base,
                        &crate::modbus::f32_to_registers(w.value as f32),
                    )?);
                    core.log_command(&w.signal, w.value, sim, None, "written")?;
                }
                cycles.push(cycle);
                queue.schedule(apply_at, PRIO_EXCHANGE, Ev::ApplyWrites { requests });
            }
            Ev::ApplyWrites { requests } => {
                for request in requests {
                    let reply = handle_frame(&map, &request)
                        .ok_or_else(|| ScenarioError::Runtime("modbus write failed".into()))?;
                    let (_, resp) = codec::decode_response(&reply)?;
                    if let codec::Response::Exception { function, code } = resp {
                        return Err(ScenarioError::Runtime(format!(
                            "command write rejected: fc 0x{function:02X} code 0x{code:02X}"
                        )));
                    }
                }
            }
        }
    }

    if let Some(mut w) = truth_writer.take() {
        w.flush()?;
    }
    core.flush()?;

    run_dir.write_text(LEDGER_FILE, &ledger.to_csv())?;
    run_dir.write_text(CYCLES_FILE, &cycles_csv(&cycles))?;

    let mut metrics: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    metrics.insert("poll_cycles".into(), core.counters.poll_cycles.into());
    metrics.insert(
        "commands_written".into(),
        core.counters.commands_written.into(),
    );
    metrics.insert(
        "commands_dropped".into(),
        core.counters.commands_dropped.into(),
    );
    metrics.insert("groups_energized".into(), rts.energized().into());
    metrics.insert("complete_cycles".into(), cycles.len().into());
    metrics.insert("seed".into(), seed.into());

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

fn cycles_csv(cycles: &[Vec<(Leg, SimTime, SimTime)>]) -> String {
    let mut out = String::from("cycle,leg,send_us,recv_us,latency_us\n");
    for (i, cycle) in cycles.iter().enumerate() {
        for (leg, send, recv) in cycle {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                leg,
                send.as_micros(),
                recv.as_micros(),
                recv.since(*send).as_micros()
            ));
        }
    }
    out
}

/// Parse `cycles.csv` back into one ledger per cycle.
pub fn parse_cycles_csv(text: &str) -> Result<Vec<LatencyLedger>, ScenarioError> {
    let mut out: Vec<(usize, LatencyLedger)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(ScenarioError::Runtime(format!(
                "bad cycles.csv line {}",
                i + 1
            )));
        }
        let cycle: usize = fields[0]
            .parse()
            .map_err(|_| ScenarioError::Runtime(format!("bad cycle id on line {}", i + 1)))?;
        let leg = Leg::parse(fields[1])
            .ok_or_else(|| ScenarioError::Runtime(format!("bad leg on line {}", i + 1)))?;
        let send: u64 = fields[2]
            .parse()
            .map_err(|_| ScenarioError::Runtime(format!("bad send on line {}", i + 1)))?;
        let recv: u64 = fields[3]
            .parse()
            .map_err(|_| ScenarioError::Runtime(format!("bad recv on line {}", i + 1)))?;
        if out.last().map(|(id, _)| *id) != Some(cycle) {
            out.push((cycle, LatencyLedger::new()));
        }
        out.last_mut().unwrap().1.record(
            leg,
            SimTime::from_micros(send),
            SimTime::from_micros(recv),
        )?;
    }
    Ok(out.into_iter().map(|(_, l)| l).collect())
}

// ---------------------------------------------------------------------------
// realtime mode
// ---------------------------------------------------------------------------

fn run_realtime(config: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    let step = config.step.resolve(config.scenario)?;
    let duration = config.duration();
    // Wall pacing below one millisecond is not meaningful on a desk
    // machine; clamp the tick.
    let tick = step.ts_phasor.max(Duration::from_millis(1));

    let mut run_dir = RunDir::create(out_dir)?;
    let clock = crate::time::SimClock::realtime();
    let stop = Arc::new(AtomicBool::new(false));

    // Simulator endpoint: register map served over real Modbus-TCP.
    let map = Arc::new(Mutex::new({
        let mut m = RegisterMap::new();
        MicrogridRts::new(rts_config(config, tick)).bind_registers(&mut m)?;
        m
    }));
    let server = crate::modbus::serve(map.clone(), "127.0.0.1:0")?;
    let modbus_endpoint = server.addr().to_string();

    // Management system: framed-socket server applying the schedule rule.
    let listener = FramedListener::bind("127.0.0.1:0")?;
    let mcs_endpoint = listener.local_addr()?.to_string();
    let rule = schedule_rule(config);
    let mcs_stop = stop.clone();
    let mcs_clock = clock.clone();
    let mcs_thread = std::thread::spawn(move || {
        let mut mcs = Mcs::new("mcs", rule);
        let mut conn = None;
        while !mcs_stop.load(Ordering::Acquire) {
            if conn.is_none() {
                match listener.accept_timeout(Duration::from_millis(100)) {
                    Ok(Some(c)) => conn = Some(c),
                    Ok(None) => continue,
                    Err(_) => break,
                }
            }
            let sock = conn.as_mut().unwrap();
            match sock.poll() {
                Ok(frames) => {
                    for f in frames {
                        if let Ok(Some(cmd)) = mcs.on_measurement(&f, mcs_clock.now()) {
                            let _ = sock.send(&cmd);
                        }
                    }
                }
                Err(_) => conn = None,
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    });

    // Microgrid model thread: tick the registers, record ground truth.
    let rts_stop = stop.clone();
    let rts_clock = clock.clone();
    let rts_map = map.clone();
    let rts_cfg = rts_config(config, tick);
    let rts_thread = std::thread::spawn(move || {
        let mut rts = MicrogridRts::new(rts_cfg);
        let mut rows = String::from("sim_time_us,v_pu,f_hz,p_w\n");
        let started = std::time::Instant::now();
        let mut k = 0u64;
        while !rts_stop.load(Ordering::Acquire) {
            let target = started + tick * (k as u32);
            let now = std::time::Instant::now();
            if now < target {
                std::thread::sleep(target - now);
            }
            let t = rts_clock.now();
            let gt = rts.tick(t, &mut rts_map.lock().unwrap());
            rows.push_str(&format!(
                "{},{},{},{}\n",
                gt.sim_time.as_micros(),
                fmt_f64(gt.v_pu),
                fmt_f64(gt.f_hz),
                fmt_f64(gt.p_w)
            ));
            k += 1;
        }
        (rows, rts.energized())
    });

    let bridge = crate::bridge::run(
        bridge_config(
            config,
            out_dir,
            config.local.groups,
            modbus_endpoint,
            mcs_endpoint,
        ),
        clock.clone(),
    )?;
    run_dir.track(BRIDGE_LOG_FILE);
    run_dir.track(&format!("{BRIDGE_LOG_FILE}.jsonl"));

    std::thread::sleep(duration);
    stop.store(true, Ordering::Release);
    let counters = bridge.stop();
    let (truth_rows, energized) = rts_thread
        .join()
        .map_err(|_| ScenarioError::Runtime("rts thread panicked".into()))?;
    mcs_thread
        .join()
        .map_err(|_| ScenarioError::Runtime("mcs thread panicked".into()))?;
    server.stop();

    if config.local.write_ground_truth {
        run_dir.write_text(GROUND_TRUTH_FILE, &truth_rows)?;
    }
    // Per-leg stamps are not observable on real sockets without
    // instrumented peers; the realtime run ships an empty ledger.
    run_dir.write_text(LEDGER_FILE, "leg,send_us,recv_us,latency_us\n")?;
    run_dir.write_text(CYCLES_FILE, "cycle,leg,send_us,recv_us,latency_us\n")?;

    let mut metrics: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    metrics.insert("poll_cycles".into(), counters.poll_cycles.into());
    metrics.insert("polls_skipped".into(), counters.polls_skipped.into());
    metrics.insert("commands_written".into(), counters.commands_written.into());
    metrics.insert("groups_energized".into(), energized.into());
    metrics.insert("reconnects".into(), counters.reconnects.into());

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
