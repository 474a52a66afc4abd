//! Append-only bridge log.
//!
//! The primary log is CSV with exactly the columns
//! `wall_time,sim_time_us,direction,signal_id,value,seq` (wall_time empty
//! under the virtual clock). A JSONL side log additionally records a
//! disposition per entry, which is where command outcomes (written,
//! dropped and why) live, since the CSV column set is fixed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};

use crate::bridge::BridgeError;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

pub struct BridgeLog {
    csv: BufWriter<File>,
    jsonl: Option<BufWriter<File>>,
    up_seq: u64,
    down_seq: u64,
}

fn fmt_wall(wall: Option<DateTime<Utc>>) -> String {
    wall.map(|w| w.to_rfc3339_opts(SecondsFormat::Micros, true))
        .unwrap_or_default()
}

impl BridgeLog {
    /// Create the log files. `clock_source` is flagged in a leading
    /// comment line (`register` when the simulator's embedded time drives
    /// the stamps, `local` when the bridge fell back to its own clock).
    pub fn create(path: &Path, jsonl: bool, clock_source: &str) -> Result<Self, BridgeError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut csv = BufWriter::new(File::create(path)?);
        writeln!(csv, "# clock_source={clock_source}")?;
        writeln!(csv, "wall_time,sim_time_us,direction,signal_id,value,seq")?;
        let jsonl = if jsonl {
            let mut p = path.as_os_str().to_os_string();
            p.push(".jsonl");
            Some(BufWriter::new(File::create(PathBuf::from(p))?))
        } else {
            None
        };
        Ok(BridgeLog {
            csv,
            jsonl,
            up_seq: 0,
            down_seq: 0,
        })
    }

    fn next_seq(&mut self, dir: Direction) -> u64 {
        let seq = match dir {
            Direction::Up => &mut self.up_seq,
            Direction::Down => &mut self.down_seq,
        };
        *seq += 1;
        *seq
    }

    /// Append one entry; returns the per-direction sequence number.
    pub fn append(
        &mut self,
        dir: Direction,
        wall: Option<DateTime<Utc>>,
        sim: SimTime,
        signal: &str,
        value: f64,
        disposition: &str,
    ) -> Result<u64, BridgeError> {
        let seq = self.next_seq(dir);
        writeln!(
            self.csv,
            "{},{},{},{},{},{}",
            fmt_wall(wall),
            sim.as_micros(),
            dir.as_str(),
            signal,
            value,
            seq
        )?;
        if let Some(j) = &mut self.jsonl {
            let line = serde_json::json!({
                "wall_time": wall.map(|w| w.to_rfc3339_opts(SecondsFormat::Micros, true)),
                "sim_time_us": sim.as_micros(),
                "direction": dir.as_str(),
                "signal_id": signal,
                "value": value,
                "seq": seq,
                "disposition": disposition,
            });
            writeln!(j, "{line}")?;
        }
        Ok(seq)
    }

    /// JSONL-only event for frames that cannot be attributed to a signal
    /// (e.g. undecodable command frames: logged, then dropped).
    pub fn event(
        &mut self,
        wall: Option<DateTime<Utc>>,
        sim: SimTime,
        disposition: &str,
    ) -> Result<(), BridgeError> {
        if let Some(j) = &mut self.jsonl {
            let line = serde_json::json!({
                "wall_time": wall.map(|w| w.to_rfc3339_opts(SecondsFormat::Micros, true)),
                "sim_time_us": sim.as_micros(),
                "direction": "down",
                "disposition": disposition,
            });
            writeln!(j, "{line}")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), BridgeError> {
        self.csv.flush()?;
        if let Some(j) = &mut self.jsonl {
            j.flush()?;
        }
        Ok(())
    }
}

/// Parsed log, split per direction into per-signal ordered series.
#[derive(Debug, Default)]
pub struct ReplayedLog {
    pub up: BTreeMap<String, Vec<(SimTime, f64)>>,
    pub down: BTreeMap<String, Vec<(SimTime, f64)>>,
    pub skipped_lines: u64,
    pub clock_source: Option<String>,
}

/// Rebuild per-signal time series from a bridge log. Corrupt lines are
/// skipped and counted, never fatal.
pub fn replay_log(path: &Path) -> Result<ReplayedLog, BridgeError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = ReplayedLog::default();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# clock_source=") {
            out.clock_source = Some(rest.trim().to_string());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if i <= 1 && line.starts_with("wall_time,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            out.skipped_lines += 1;
            continue;
        }
        let (sim, dir, signal, value) = (fields[1], fields[2], fields[3], fields[4]);
        let Ok(sim_us) = sim.parse::<u64>() else {
            out.skipped_lines += 1;
            continue;
        };
        let Ok(value) = value.parse::<f64>() else {
            out.skipped_lines += 1;
            continue;
        };
        let series = match dir {
            "up" => &mut out.up,
            "down" => &mut out.down,
            _ => {
                out.skipped_lines += 1;
                continue;
            }
        };
        series
            .entry(signal.to_string())
            .or_default()
            .push((SimTime::from_micros(sim_us), value));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_and_replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bridge_log.csv");
        let mut log = BridgeLog::create(&path, true, "register").unwrap();
        for k in 1..=3u64 {
            for sig in ["a", "b", "c"] {
                log.append(
                    Direction::Up,
                    None,
                    SimTime::from_secs(k),
                    sig,
                    k as f64 * 0.5,
                    "polled",
                )
                .unwrap();
            }
        }
        log.append(
            Direction::Down,
            None,
            SimTime::from_secs(2),
            "cmd",
            0.8,
            "written",
        )
        .unwrap();
        log.flush().unwrap();

        let replay = replay_log(&path).unwrap();
        assert_eq!(replay.up.len(), 3);
        for series in replay.up.values() {
            assert_eq!(series.len(), 3);
        }
        assert_eq!(replay.down["cmd"], vec![(SimTime::from_secs(2), 0.8)]);
        assert_eq!(replay.skipped_lines, 0);
        assert_eq!(replay.clock_source.as_deref(), Some("register"));
        assert!(
            path.with_extension("csv.jsonl").exists() || {
                // extension handling appends, so check the literal sibling
                dir.path().join("bridge_log.csv.jsonl").exists()
            }
        );
    }

    #[test]
    fn replay_of_empty_log_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = BridgeLog::create(&path, false, "local").unwrap();
        log.flush().unwrap();
        let replay = replay_log(&path).unwrap();
        assert!(replay.up.is_empty());
        assert!(replay.down.is_empty());
    }

    #[test]
    fn corrupt_lines_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = BridgeLog::create(&path, false, "local").unwrap();
        log.append(
            Direction::Up,
            None,
            SimTime::from_secs(1),
            "a",
            1.0,
            "polled",
        )
        .unwrap();
        log.flush().unwrap();
        drop(log);
        use std::io::Write as _;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap();
        writeln!(f, "garbage,line").unwrap();
        writeln!(f, ",notanumber,up,a,1.0,2").unwrap();
        drop(f);

        let replay = replay_log(&path).unwrap();
        assert_eq!(replay.up["a"].len(), 1);
        assert_eq!(replay.skipped_lines, 2);
    }

    #[test]
    fn seq_strictly_increasing_per_direction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = BridgeLog::create(&path, false, "local").unwrap();
        let s1 = log
            .append(Direction::Up, None, SimTime::ZERO, "a", 0.0, "polled")
            .unwrap();
        let s2 = log
            .append(Direction::Down, None, SimTime::ZERO, "b", 0.0, "written")
            .unwrap();
        let s3 = log
            .append(Direction::Up, None, SimTime::ZERO, "a", 0.0, "polled")
            .unwrap();
        assert_eq!((s1, s2, s3), (1, 1, 2));
    }
}
