//! Minute-scale management endpoint.
//!
//! Two dispatch rules cover the scenarios: mirroring received node powers
//! back as commands (load following between two systems), and a fixed
//! energization schedule that switches load groups on at a configured
//! interval. Measurement frames older than the newest already processed
//! are ignored and counted.

use std::time::Duration;

use crate::time::{SimTime, TimestampedSample};
use crate::transport::{Frame, FrameKind, TransportError};

#[derive(Debug, Clone, PartialEq)]
pub enum McsRule {
    /// Command each listed signal to the value received for it; an empty
    /// list mirrors every sample in the frame.
    LoadFollowing { signals: Vec<String> },
    /// Energize `group_signals[k]` at `start + k * interval`.
    StepSchedule {
        start: SimTime,
        interval: Duration,
        group_signals: Vec<String>,
    },
}

pub struct Mcs {
    id: String,
    rule: McsRule,
    newest_seen: Option<SimTime>,
    stale_count: u64,
    cmd_seq: u64,
    energized: usize,
}

impl Mcs {
    pub fn new(id: impl Into<String>, rule: McsRule) -> Self {
        Mcs {
            id: id.into(),
            rule,
            newest_seen: None,
            stale_count: 0,
            cmd_seq: 0,
            energized: 0,
        }
    }

    /// Process one measurement frame, possibly producing a command frame.
    pub fn on_measurement(
        &mut self,
        frame: &Frame,
        now: SimTime,
    ) -> Result<Option<Frame>, TransportError> {
        if let Some(newest) = self.newest_seen {
            if frame.send_sim_time <= newest {
                self.stale_count += 1;
                return Ok(None);
            }
        }
        self.newest_seen = Some(frame.send_sim_time);

        let commands: Vec<TimestampedSample> = match &self.rule {
            McsRule::LoadFollowing { signals } => frame
                .samples
                .iter()
                .filter(|s| signals.is_empty() || signals.iter().any(|w| w == &s.signal_id))
                .map(|s| TimestampedSample {
                    signal_id: s.signal_id.clone(),
                    sim_time: now,
                    wall_time: None,
                    value: s.value,
                })
                .collect(),
            McsRule::StepSchedule {
                start,
                interval,
                group_signals,
            } => {
                let due = if frame.send_sim_time < *start {
                    0
                } else {
                    let elapsed = frame.send_sim_time.since(*start);
                    let steps = elapsed.as_micros() / interval.as_micros().max(1);
                    (steps as usize + 1).min(group_signals.len())
                };
                let newly = (self.energized..due)
                    .map(|k| {
                        TimestampedSample::new(group_signals[k].clone(), now, 1.0)
                            .expect("group signal ids are non-empty")
                    })
                    .collect::<Vec<_>>();
                self.energized = due;
                newly
            }
        };

        if commands.is_empty() {
            return Ok(None);
        }
        self.cmd_seq += 1;
        Ok(Some(Frame::new(
            FrameKind::Command,
            self.cmd_seq,
            self.id.clone(),
            now,
            commands,
        )?))
    }

    pub fn stale_count(&self) -> u64 {
        self.stale_count
    }

    pub fn energized_count(&self) -> usize {
        self.energized
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measurement(seq: u64, t: SimTime, samples: Vec<(&str, f64)>) -> Frame {
        Frame::new(
            FrameKind::Measurement,
            seq,
            "src",
            t,
            samples
                .into_iter()
                .map(|(id, v)| TimestampedSample::new(id, t, v).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_following_mirrors_received_powers() {
        let mut mcs = Mcs::new("mcs", McsRule::LoadFollowing { signals: vec![] });
        let frame = measurement(
            1,
            SimTime::from_secs(1),
            vec![("node_p_1", 1.0e6), ("node_p_2", 2.0e6)],
        );
        let cmd = mcs
            .on_measurement(&frame, SimTime::from_secs(1))
            .unwrap()
            .unwrap();
        assert_eq!(cmd.kind, FrameKind::Command);
        let vals: Vec<f64> = cmd.samples.iter().map(|s| s.value).collect();
        assert_eq!(vals, vec![1.0e6, 2.0e6]);
    }

    #[test]
    fn schedule_energizes_three_of_five_at_250s() {
        let groups: Vec<String> = (0..5).map(|k| format!("lg_{k}")).collect();
        let mut mcs = Mcs::new(
            "mcs",
            McsRule::StepSchedule {
                start: SimTime::from_secs(50),
                interval: Duration::from_secs(100),
                group_signals: groups,
            },
        );
        let frame = measurement(1, SimTime::from_secs(250), vec![("total_power", 1.0)]);
        let cmd = mcs
            .on_measurement(&frame, SimTime::from_secs(250))
            .unwrap()
            .unwrap();
        assert_eq!(mcs.energized_count(), 3);
        let ids: Vec<&str> = cmd.samples.iter().map(|s| s.signal_id.as_str()).collect();
        assert_eq!(ids, vec!["lg_0", "lg_1", "lg_2"]);
    }

    #[test]
    fn stale_frames_ignored_and_counted() {
        let mut mcs = Mcs::new("mcs", McsRule::LoadFollowing { signals: vec![] });
        let f1 = measurement(1, SimTime::from_secs(10), vec![("p", 1.0)]);
        let f_old = measurement(2, SimTime::from_secs(5), vec![("p", 9.0)]);
        mcs.on_measurement(&f1, SimTime::from_secs(10)).unwrap();
        let out = mcs.on_measurement(&f_old, SimTime::from_secs(11)).unwrap();
        assert!(out.is_none());
        assert_eq!(mcs.stale_count(), 1);
    }

    #[test]
    fn schedule_emits_each_group_once() {
        let groups: Vec<String> = (0..5).map(|k| format!("lg_{k}")).collect();
        let mut mcs = Mcs::new(
            "mcs",
            McsRule::StepSchedule {
                start: SimTime::from_secs(50),
                interval: Duration::from_secs(100),
                group_signals: groups,
            },
        );
        let mut commanded = Vec::new();
        for s in (0..=500).step_by(10) {
            let frame = measurement(s / 10 + 1, SimTime::from_secs(s), vec![("x", 0.0)]);
            if let Some(cmd) = mcs.on_measurement(&frame, SimTime::from_secs(s)).unwrap() {
                commanded.extend(cmd.samples.iter().map(|c| c.signal_id.clone()));
            }
        }
        assert_eq!(commanded, vec!["lg_0", "lg_1", "lg_2", "lg_3", "lg_4"]);
        assert_eq!(mcs.energized_count(), 5);
    }
}
