//! Reports over a completed run directory. Every run is self-describing
//! (the manifest carries the scenario kind and config echo), so reports
//! need nothing beyond the directory itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cosim_core::scenario::{self, ScenarioError};
use cosim_core::signals::fidelity::fidelity_metrics;
use cosim_core::time::{decompose, LatencyLedger};

use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Latency,
    Fidelity,
    Decompose,
}

#[derive(Debug)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col_index(&self, name: &str) -> Result<usize, ScenarioError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ScenarioError::Runtime(format!("column {name:?} not found")))
    }

    fn col_f64(&self, name: &str) -> Result<Vec<f64>, ScenarioError> {
        let i = self.col_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<f64>()
                    .map_err(|_| ScenarioError::Runtime(format!("bad value in column {name:?}")))
            })
            .collect()
    }
}

fn read_table(path: &Path) -> Result<Table, ScenarioError> {
    if !path.exists() {
        return Err(ScenarioError::Runtime(format!(
            "missing trace {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| ScenarioError::Runtime(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .filter(|r| r.len() == header.len())
        .collect();
    Ok(Table { header, rows })
}

fn write_report_file(
    dir: &Path,
    name: &str,
    content: &str,
    files: &mut Vec<PathBuf>,
) -> Result<(), ScenarioError> {
    let analysis = dir.join("analysis");
    std::fs::create_dir_all(&analysis)?;
    let path = analysis.join(name);
    std::fs::write(&path, content)?;
    files.push(path);
    Ok(())
}

pub fn analyze(dir: &Path, kind: ReportKind) -> Result<ReportOutput, ScenarioError> {
    let manifest = scenario::read_manifest(dir)?;
    match kind {
        ReportKind::Latency => latency_report(dir, &manifest),
        ReportKind::Fidelity => fidelity_report(dir, &manifest),
        ReportKind::Decompose => decompose_report(dir),
    }
}

// ---------------------------------------------------------------------------
// latency
// ---------------------------------------------------------------------------

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn latency_report(dir: &Path, manifest: &serde_json::Value) -> Result<ReportOutput, ScenarioError> {
    // Prefer the fileshare delay trace; otherwise use the latency ledger.
    let delays_path = dir.join("delays.csv");
    let (samples, source): (Vec<f64>, String) = if delays_path.exists() {
        let t = read_table(&delays_path)?;
        (t.col_f64("delay_injected_s")?, "delays.csv".into())
    } else {
        let ledger_path = dir.join("ledger.csv");
        let t = read_table(&ledger_path)?;
        (
            t.col_f64("latency_us")?.iter().map(|us| us / 1e6).collect(),
            "ledger.csv".into(),
        )
    };
    if samples.is_empty() {
        return Err(ScenarioError::Runtime(format!(
            "no latency records in {} under {}",
            source,
            dir.display()
        )));
    }

    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = *sorted.last().unwrap();
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let (p50, p90, p99) = (
        percentile(&sorted, 0.50),
        percentile(&sorted, 0.90),
        percentile(&sorted, 0.99),
    );

    let bin = manifest["config"]["histogram_bin_s"]
        .as_f64()
        .unwrap_or(0.5);
    let lo = (min / bin).floor() * bin;
    let mut bins: Vec<(f64, f64, u64)> = Vec::new();
    let mut b = lo;
    while b <= max {
        let hi = b + bin;
        let count = samples.iter().filter(|s| **s >= b && **s < hi).count() as u64;
        bins.push((b, hi, count));
        b = hi;
    }

    let mut files = Vec::new();
    let mut stats = String::from("count,min_s,max_s,mean_s,p50_s,p90_s,p99_s\n");
    writeln!(
        stats,
        "{},{min},{max},{mean},{p50},{p90},{p99}",
        sorted.len()
    )
    .unwrap();
    write_report_file(dir, "latency_stats.csv", &stats, &mut files)?;

    let mut hist = String::from("bin_lo_s,bin_hi_s,count\n");
    for (lo, hi, count) in &bins {
        writeln!(hist, "{lo},{hi},{count}").unwrap();
    }
    write_report_file(dir, "latency_histogram.csv", &hist, &mut files)?;

    let chart = svg::histogram_chart(
        &format!("observed delay distribution ({source}, bin {bin} s)"),
        "delay [s]",
        &bins,
    );
    write_report_file(dir, "latency_histogram.svg", &chart, &mut files)?;

    Ok(ReportOutput {
        files,
        summary: format!(
            "latency: n={}, min={min:.6} s, mean={mean:.6} s, max={max:.6} s, p50={p50:.6}, p90={p90:.6}, p99={p99:.6}",
            sorted.len()
        ),
    })
}

// ---------------------------------------------------------------------------
// fidelity
// ---------------------------------------------------------------------------

const FIDELITY_HEADER: &str = "series,channel,rmse,lag_samples,lag_ms,total_variation\n";

fn fidelity_report(
    dir: &Path,
    manifest: &serde_json::Value,
) -> Result<ReportOutput, ScenarioError> {
    match manifest["scenario"].as_str().unwrap_or("") {
        "vpn_td" => fidelity_vpn(dir),
        "local_lg" => fidelity_local(dir),
        "fileshare_loadfollow" => fidelity_fileshare(dir),
        other => Err(ScenarioError::Runtime(format!(
            "fidelity report not defined for scenario {other:?}"
        ))),
    }
}

fn fidelity_vpn(dir: &Path) -> Result<ReportOutput, ScenarioError> {
    let truth = read_table(&dir.join("truth_emt.csv"))?;
    let t_us = truth.col_f64("sim_time_us")?;
    let truth_v = truth.col_f64("v_mag_pu")?;
    let truth_f = truth.col_f64("freq_hz")?;
    if t_us.len() < 2 {
        return Err(ScenarioError::Runtime(
            "truth_emt.csv has too few rows".into(),
        ));
    }
    let dt_s = (t_us[1] - t_us[0]) / 1e6;
    let max_lag = (0.2 / dt_s) as usize;

    let mut smoother_files: Vec<(String, PathBuf)> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_prefix("distribution_")
                .and_then(|s| s.strip_suffix(".csv"))
                .map(|label| (label.to_string(), e.path()))
        })
        .collect();
    smoother_files.sort();
    if smoother_files.is_empty() {
        return Err(ScenarioError::Runtime(format!(
            "missing trace {}",
            dir.join("distribution_<smoother>.csv").display()
        )));
    }

    let mut csv = String::from(FIDELITY_HEADER);
    let mut freq_series: Vec<(String, Vec<(f64, f64)>)> = vec![(
        "truth".into(),
        t_us.iter()
            .zip(&truth_f)
            .map(|(t, f)| (t / 1e6, *f))
            .collect(),
    )];
    let mut lag_by_label: BTreeMap<String, f64> = BTreeMap::new();

    for (label, path) in &smoother_files {
        let tr = read_table(path)?;
        let f_received = tr.col_f64("f_received_hz")?;
        let v_pcc = tr.col_f64("v_pcc_pu")?;
        let n = f_received.len().min(truth_f.len());
        let fid_f = fidelity_metrics(&truth_f[..n], &f_received[..n], max_lag)?;
        let fid_v = fidelity_metrics(&truth_v[..n], &v_pcc[..n], max_lag)?;
        for (channel, fid) in [("freq", fid_f), ("v_mag", fid_v)] {
            writeln!(
                csv,
                "{label},{channel},{},{},{},{}",
                fid.rmse,
                fid.lag_samples,
                fid.lag_samples as f64 * dt_s * 1e3,
                fid.total_variation
            )
            .unwrap();
        }
        lag_by_label.insert(label.clone(), fid_f.lag_samples as f64 * dt_s * 1e3);
        freq_series.push((
            label.clone(),
            t_us.iter()
                .take(n)
                .zip(&f_received[..n])
                .map(|(t, f)| (t / 1e6, *f))
                .collect(),
        ));
    }

    let mut files = Vec::new();
    write_report_file(dir, "fidelity.csv", &csv, &mut files)?;
    let chart = svg::polyline_chart(
        "reconstructed frequency vs truth",
        "time [s]",
        "frequency [Hz]",
        &freq_series,
    );
    write_report_file(dir, "fidelity.svg", &chart, &mut files)?;

    let lags: Vec<String> = lag_by_label
        .iter()
        .map(|(l, ms)| format!("{l}={ms:.1}ms"))
        .collect();
    Ok(ReportOutput {
        files,
        summary: format!("fidelity (freq lag): {}", lags.join(", ")),
    })
}

fn fidelity_local(dir: &Path) -> Result<ReportOutput, ScenarioError> {
    let truth = read_table(&dir.join("ground_truth.csv"))?;
    let t_us = truth.col_f64("sim_time_us")?;
    let mut truth_at: BTreeMap<u64, (f64, f64, f64)> = BTreeMap::new();
    let (v, f, p) = (
        truth.col_f64("v_pu")?,
        truth.col_f64("f_hz")?,
        truth.col_f64("p_w")?,
    );
    for (i, t) in t_us.iter().enumerate() {
        truth_at.insert(*t as u64, (v[i], f[i], p[i]));
    }

    let log_path = dir.join("bridge_log.csv");
    if !log_path.exists() {
        return Err(ScenarioError::Runtime(format!(
            "missing trace {}",
            log_path.display()
        )));
    }
    let replay = cosim_core::bridge::replay_log(&log_path)
        .map_err(|e| ScenarioError::Runtime(e.to_string()))?;

    let mut csv = String::from(FIDELITY_HEADER);
    let mut power_series: Vec<(String, Vec<(f64, f64)>)> = vec![(
        "truth".into(),
        t_us.iter().zip(&p).map(|(t, p)| (t / 1e6, *p)).collect(),
    )];
    for (signal, pick) in [
        ("pcc_voltage", 0usize),
        ("frequency", 1),
        ("total_power", 2),
    ] {
        let Some(series) = replay.up.get(signal) else {
            continue;
        };
        let mut reference = Vec::new();
        let mut candidate = Vec::new();
        for (t, value) in series {
            if let Some(truth_row) = truth_at.get(&t.as_micros()) {
                let tv = [truth_row.0, truth_row.1, truth_row.2][pick];
                reference.push(tv);
                candidate.push(*value);
            }
        }
        if reference.is_empty() {
            continue;
        }
        let fid = fidelity_metrics(&reference, &candidate, 10)?;
        writeln!(
            csv,
            "bridge,{signal},{},{},,{}",
            fid.rmse, fid.lag_samples, fid.total_variation
        )
        .unwrap();
        if signal == "total_power" {
            power_series.push((
                "bridge".into(),
                series.iter().map(|(t, v)| (t.as_secs_f64(), *v)).collect(),
            ));
        }
    }

    let mut files = Vec::new();
    write_report_file(dir, "fidelity.csv", &csv, &mut files)?;
    let chart = svg::polyline_chart(
        "bridge-sampled power vs ground truth",
        "time [s]",
        "power [W]",
        &power_series,
    );
    write_report_file(dir, "fidelity.svg", &chart, &mut files)?;
    Ok(ReportOutput {
        files,
        summary: "fidelity: bridge samples vs 1 ms ground truth".into(),
    })
}

fn fidelity_fileshare(dir: &Path) -> Result<ReportOutput, ScenarioError> {
    let source = read_table(&dir.join("source_profile.csv"))?;
    let follower = read_table(&dir.join("follower_profile.csv"))?;
    let src_seq = source.col_f64("write_seq")?;
    let src_p = source.col_f64("total_p_w")?;
    let fol_seq = follower.col_f64("write_seq")?;
    let fol_p = follower.col_f64("total_p_w")?;

    let by_seq: BTreeMap<u64, f64> = src_seq
        .iter()
        .zip(&src_p)
        .map(|(s, p)| (*s as u64, *p))
        .collect();
    let mut reference = Vec::new();
    let mut candidate = Vec::new();
    for (s, p) in fol_seq.iter().zip(&fol_p) {
        if let Some(src) = by_seq.get(&(*s as u64)) {
            reference.push(*src);
            candidate.push(*p);
        }
    }
    if reference.is_empty() {
        return Err(ScenarioError::Runtime(
            "no matched publishes between source and follower".into(),
        ));
    }
    let fid = fidelity_metrics(&reference, &candidate, reference.len() / 2)?;
    let mut csv = String::from(FIDELITY_HEADER);
    writeln!(
        csv,
        "follower,total_p_w,{},{},,{}",
        fid.rmse, fid.lag_samples, fid.total_variation
    )
    .unwrap();
    let mut files = Vec::new();
    write_report_file(dir, "fidelity.csv", &csv, &mut files)?;
    let chart = svg::polyline_chart(
        "mirrored load vs source (by publish seq)",
        "write_seq",
        "total power [W]",
        &[
            (
                "source".into(),
                src_seq.iter().zip(&src_p).map(|(s, p)| (*s, *p)).collect(),
            ),
            (
                "follower".into(),
                fol_seq.iter().zip(&fol_p).map(|(s, p)| (*s, *p)).collect(),
            ),
        ],
    );
    write_report_file(dir, "fidelity.svg", &chart, &mut files)?;
    Ok(ReportOutput {
        files,
        summary: format!(
            "fidelity: follower mirrors source over {} publishes, rmse {}",
            reference.len(),
            fid.rmse
        ),
    })
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

fn decompose_report(dir: &Path) -> Result<ReportOutput, ScenarioError> {
    let ledger_path = dir.join("ledger.csv");
    if !ledger_path.exists() {
        return Err(ScenarioError::Runtime(format!(
            "missing trace {}",
            ledger_path.display()
        )));
    }
    let ledger_text = std::fs::read_to_string(&ledger_path)?;
    let ledger =
        LatencyLedger::from_csv(&ledger_text).map_err(|e| ScenarioError::Runtime(e.to_string()))?;

    // Per-leg aggregate over everything recorded.
    let mut agg: BTreeMap<&'static str, (u64, u64, u64, u64)> = BTreeMap::new();
    for r in ledger.records() {
        let us = r.latency().as_micros() as u64;
        let e = agg.entry(r.leg.as_str()).or_insert((0, 0, u64::MAX, 0));
        e.0 += 1;
        e.1 += us;
        e.2 = e.2.min(us);
        e.3 = e.3.max(us);
    }
    let mut csv = String::from("leg,count,total_us,mean_us,min_us,max_us\n");
    for (leg, (count, total, min, max)) in &agg {
        writeln!(
            csv,
            "{leg},{count},{total},{},{min},{max}",
            *total as f64 / (*count).max(1) as f64
        )
        .unwrap();
    }
    let mut files = Vec::new();
    write_report_file(dir, "decompose.csv", &csv, &mut files)?;

    // Per-cycle exact decomposition when the run recorded cycles.
    let cycles_path = dir.join("cycles.csv");
    let mut summary = format!(
        "decompose: {} records across {} leg kinds",
        ledger.len(),
        agg.len()
    );
    if cycles_path.exists() {
        let cycles = scenario::local_lg::parse_cycles_csv(&std::fs::read_to_string(&cycles_path)?)?;
        if !cycles.is_empty() {
            let mut ccsv = String::from("cycle,leg_total_us,end_to_end_us,exact\n");
            let mut all_exact = true;
            for (i, cycle) in cycles.iter().enumerate() {
                let b = decompose(cycle).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
                let exact = b.leg_total == b.end_to_end;
                all_exact &= exact;
                writeln!(
                    ccsv,
                    "{i},{},{},{exact}",
                    b.leg_total.as_micros(),
                    b.end_to_end.as_micros()
                )
                .unwrap();
            }
            write_report_file(dir, "decompose_cycles.csv", &ccsv, &mut files)?;
            write!(
                summary,
                "; {} complete cycles, leg sums {} end-to-end",
                cycles.len(),
                if all_exact { "equal" } else { "DO NOT equal" }
            )
            .unwrap();
        }
    }

    Ok(ReportOutput { files, summary })
}
