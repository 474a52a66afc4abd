//! Shared-directory frame exchange with injected sync delay.
//!
//! Emulates a cloud-drive share at desk scale: each writer owns one
//! `<writer_id>.latest` file with latest-state (overwrite) semantics.
//! Publishing writes a temp file and atomically renames it into place
//! under a per-writer lock file. Watching polls modification stamps,
//! parses new versions, and defers their visibility by a draw from a
//! latency model -- the stand-in for cloud synchronization delay.
//!
//! Overwritten (never-seen) versions are detected through write_seq gaps
//! and counted; unparseable files are quarantined with a `.corrupt`
//! suffix and counted, never fatal.
//!
//! File format: a plain-text header line
//! `CSLF1 <writer_id> <write_seq> <write_sim_time_us>`
//! followed by one base64 line wrapping the concatenated binary frames.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::time::SimTime;
use crate::transport::frame::{decode_frame, encode_frame};
use crate::transport::{Frame, LatencyModel, TransportError};

pub const HEADER_TAG: &str = "CSLF1";
const LOCK_RETRIES: u32 = 20;
const LOCK_RETRY_DELAY: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishReceipt {
    pub write_seq: u64,
    /// Size of the published file in bytes.
    pub file_bytes: u64,
}

pub struct FilesharePublisher {
    dir: PathBuf,
    writer_id: String,
    next_seq: u64,
}

impl FilesharePublisher {
    pub fn new(
        dir: impl Into<PathBuf>,
        writer_id: impl Into<String>,
    ) -> Result<Self, TransportError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(TransportError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("shared directory {} does not exist", dir.display()),
            )));
        }
        Ok(FilesharePublisher {
            dir,
            writer_id: writer_id.into(),
            next_seq: 1,
        })
    }

    fn latest_path(&self) -> PathBuf {
        self.dir.join(format!("{}.latest", self.writer_id))
    }

    fn lock_path(&self) -> PathBuf {
        self.dir.join(format!("{}.lock", self.writer_id))
    }

    /// Write `frames` as the writer's latest state, overwriting the
    /// previous version. The rename window is guarded by the lock file;
    /// contention past the bounded retries is a publish conflict.
    pub fn publish(
        &mut self,
        frames: &[Frame],
        write_sim_time: SimTime,
    ) -> Result<PublishReceipt, TransportError> {
        if frames.is_empty() {
            return Err(TransportError::EmptySamples);
        }
        let seq = self.next_seq;

        let mut blob = Vec::new();
        for f in frames {
            blob.extend_from_slice(&encode_frame(f)?);
        }
        let mut content = format!(
            "{HEADER_TAG} {} {} {}\n",
            self.writer_id,
            seq,
            write_sim_time.as_micros()
        );
        content.push_str(&BASE64.encode(&blob));
        content.push('\n');

        let lock = acquire_lock(&self.lock_path())?;
        let tmp = self.dir.join(format!(".{}.tmp", self.writer_id));
        let result = (|| -> Result<u64, TransportError> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content.as_bytes())?;
            f.sync_all()?;
            drop(f);
            fs::rename(&tmp, self.latest_path())?;
            Ok(content.len() as u64)
        })();
        drop(lock);

        let file_bytes = result?;
        self.next_seq += 1;
        Ok(PublishReceipt {
            write_seq: seq,
            file_bytes,
        })
    }

    pub fn writer_id(&self) -> &str {
        &self.writer_id
    }
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn acquire_lock(path: &Path) -> Result<LockGuard, TransportError> {
    for _ in 0..LOCK_RETRIES {
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
        {
            Ok(_) => return Ok(LockGuard(path.to_path_buf())),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                std::thread::sleep(LOCK_RETRY_DELAY);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(TransportError::PublishConflict(path.display().to_string()))
}

/// One published version as seen by a watcher.
#[derive(Debug, Clone)]
pub struct FileshareDelivery {
    pub writer_id: String,
    pub write_seq: u64,
    pub write_sim_time: SimTime,
    /// When the version became visible (write time plus injected sync delay).
    pub visible_at: SimTime,
    pub frames: Vec<Frame>,
    pub file_bytes: u64,
}

struct PendingVersion {
    writer_id: String,
    write_seq: u64,
    write_sim_time: SimTime,
    visible_at: SimTime,
    frames: Vec<Frame>,
    file_bytes: u64,
}

pub struct FileshareWatcher {
    dir: PathBuf,
    model: LatencyModel,
    rng: ChaCha12Rng,
    exclude: Option<String>,
    /// Newest seq read from disk, per writer (delivered or pending).
    last_scanned: BTreeMap<String, u64>,
    /// Per-writer FIFO floor on visibility times.
    last_visible: BTreeMap<String, SimTime>,
    /// mtime/len per path, to skip re-reading unchanged files.
    stamps: BTreeMap<PathBuf, (SystemTime, u64)>,
    pending: Vec<PendingVersion>,
    overwrite_gaps: u64,
    corrupt_count: u64,
}

impl FileshareWatcher {
    pub fn new(
        dir: impl Into<PathBuf>,
        model: LatencyModel,
        seed: u64,
    ) -> Result<Self, TransportError> {
        model.validate()?;
        Ok(FileshareWatcher {
            dir: dir.into(),
            model,
            rng: ChaCha12Rng::seed_from_u64(seed),
            exclude: None,
            last_scanned: BTreeMap::new(),
            last_visible: BTreeMap::new(),
            stamps: BTreeMap::new(),
            pending: Vec::new(),
            overwrite_gaps: 0,
            corrupt_count: 0,
        })
    }

    /// Ignore files published under this writer id (a federate's own).
    pub fn exclude_writer(mut self, writer_id: impl Into<String>) -> Self {
        self.exclude = Some(writer_id.into());
        self
    }

    /// Scan for new versions and return every version whose injected sync
    /// delay has elapsed by `now`. Each write_seq is returned exactly once.
    pub fn poll(&mut self, now: SimTime) -> Result<Vec<FileshareDelivery>, TransportError> {
        self.scan(now)?;
        let mut due: Vec<PendingVersion> = Vec::new();
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].visible_at <= now {
                due.push(self.pending.swap_remove(i));
            } else {
                i += 1;
            }
        }
        due.sort_by(|a, b| {
            (a.visible_at, &a.writer_id, a.write_seq).cmp(&(
                b.visible_at,
                &b.writer_id,
                b.write_seq,
            ))
        });
        Ok(due
            .into_iter()
            .map(|p| FileshareDelivery {
                writer_id: p.writer_id,
                write_seq: p.write_seq,
                write_sim_time: p.write_sim_time,
                visible_at: p.visible_at,
                frames: p.frames,
                file_bytes: p.file_bytes,
            })
            .collect())
    }

    fn scan(&mut self, _now: SimTime) -> Result<(), TransportError> {
        let mut paths: Vec<PathBuf> = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("latest") {
                paths.push(path);
            }
        }
        paths.sort();
        for path in paths {
            if let Some(excl) = &self.exclude {
                if path.file_stem().and_then(|s| s.to_str()) == Some(excl.as_str()) {
                    continue;
                }
            }
            let meta = match fs::metadata(&path) {
                Ok(m) => m,
                Err(_) => continue, // raced with a rename; next poll sees it
            };
            let stamp = (meta.modified()?, meta.len());
            if self.stamps.get(&path) == Some(&stamp) {
                continue;
            }
            self.stamps.insert(path.clone(), stamp);
            match self.read_version(&path) {
                Ok(Some(v)) => {
                    let prev = self.last_scanned.get(&v.writer_id).copied().unwrap_or(0);
                    if v.write_seq <= prev {
                        continue; // already seen this or a newer version
                    }
                    self.overwrite_gaps += v.write_seq - prev - 1;
                    self.last_scanned.insert(v.writer_id.clone(), v.write_seq);

                    let draw = self.model.draw(&mut self.rng);
                    let mut visible_at = v.write_sim_time + draw;
                    let floor = self
                        .last_visible
                        .get(&v.writer_id)
                        .copied()
                        .unwrap_or(SimTime::ZERO);
                    if visible_at < floor {
                        visible_at = floor;
                    }
                    self.last_visible.insert(v.writer_id.clone(), visible_at);
                    self.pending.push(PendingVersion { visible_at, ..v });
                }
                Ok(None) => {}
                Err(_) => {
                    self.quarantine(&path);
                }
            }
        }
        Ok(())
    }

    fn read_version(&self, path: &Path) -> Result<Option<PendingVersion>, TransportError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| TransportError::BadHeader("empty file".into()))?;
        let mut parts = header.split_ascii_whitespace();
        if parts.next() != Some(HEADER_TAG) {
            return Err(TransportError::BadHeader(format!("bad tag in {header:?}")));
        }
        let writer_id = parts
            .next()
            .ok_or_else(|| TransportError::BadHeader("missing writer id".into()))?
            .to_string();
        let write_seq: u64 = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| TransportError::BadHeader("missing write_seq".into()))?;
        let write_us: u64 = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| TransportError::BadHeader("missing write_sim_time_us".into()))?;
        let payload = lines
            .next()
            .ok_or_else(|| TransportError::BadHeader("missing payload line".into()))?;
        let blob = BASE64
            .decode(payload.trim())
            .map_err(|e| TransportError::BadHeader(format!("base64: {e}")))?;
        let mut frames = Vec::new();
        let mut rest: &[u8] = &blob;
        while !rest.is_empty() {
            match decode_frame(rest)? {
                Some((frame, consumed)) => {
                    frames.push(frame);
                    rest = &rest[consumed..];
                }
                None => {
                    return Err(TransportError::Truncated {
                        expected: 4,
                        actual: rest.len(),
                    })
                }
            }
        }
        if frames.is_empty() {
            return Err(TransportError::EmptySamples);
        }
        Ok(Some(PendingVersion {
            writer_id,
            write_seq,
            write_sim_time: SimTime::from_micros(write_us),
            visible_at: SimTime::ZERO, // assigned by the caller
            frames,
            file_bytes: text.len() as u64,
        }))
    }

    fn quarantine(&mut self, path: &Path) {
        self.corrupt_count += 1;
        let mut target = path.as_os_str().to_os_string();
        target.push(".corrupt");
        let _ = fs::rename(path, PathBuf::from(target));
        self.stamps.remove(path);
        log::warn!("quarantined unparseable shared file {}", path.display());
    }

    /// Versions skipped because a newer one overwrote them between polls.
    pub fn overwrite_gaps(&self) -> u64 {
        self.overwrite_gaps
    }

    pub fn corrupt_count(&self) -> u64 {
        self.corrupt_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::TimestampedSample;
    use crate::transport::FrameKind;

    fn frame(sender: &str, seq: u64, v: f64) -> Frame {
        Frame::new(
            FrameKind::Measurement,
            seq,
            sender,
            SimTime::from_secs(seq),
            vec![TimestampedSample::new("p", SimTime::from_secs(seq), v).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn publish_then_watch_consumes_exactly_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut publisher = FilesharePublisher::new(dir.path(), "site_a").unwrap();
        let mut watcher =
            FileshareWatcher::new(dir.path(), LatencyModel::Fixed { delay_s: 0.0 }, 1).unwrap();

        publisher
            .publish(&[frame("site_a", 1, 2.0)], SimTime::from_secs(1))
            .unwrap();
        let got = watcher.poll(SimTime::from_secs(1)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].write_seq, 1);
        assert_eq!(got[0].frames[0].samples[0].value, 2.0);
        // Idempotent consumption.
        assert!(watcher.poll(SimTime::from_secs(2)).unwrap().is_empty());
    }

    #[test]
    fn injected_delay_defers_visibility() {
        let dir = tempfile::tempdir().unwrap();
        let mut publisher = FilesharePublisher::new(dir.path(), "a").unwrap();
        let mut watcher =
            FileshareWatcher::new(dir.path(), LatencyModel::Fixed { delay_s: 2.0 }, 1).unwrap();
        publisher
            .publish(&[frame("a", 1, 1.0)], SimTime::from_secs(10))
            .unwrap();
        assert!(watcher.poll(SimTime::from_secs(11)).unwrap().is_empty());
        let got = watcher.poll(SimTime::from_secs(12)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].visible_at, SimTime::from_secs(12));
    }

    #[test]
    fn overwrites_counted_as_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let mut publisher = FilesharePublisher::new(dir.path(), "a").unwrap();
        let mut watcher =
            FileshareWatcher::new(dir.path(), LatencyModel::Fixed { delay_s: 0.0 }, 1).unwrap();
        // Three publishes between polls: only the last survives on disk.
        for k in 1..=3 {
            publisher
                .publish(&[frame("a", k, k as f64)], SimTime::from_secs(k))
                .unwrap();
        }
        let got = watcher.poll(SimTime::from_secs(10)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].write_seq, 3);
        assert_eq!(watcher.overwrite_gaps(), 2);
    }

    #[test]
    fn corrupt_file_quarantined_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("evil.latest"), b"not a header\n???\n").unwrap();
        let mut watcher =
            FileshareWatcher::new(dir.path(), LatencyModel::Fixed { delay_s: 0.0 }, 1).unwrap();
        let got = watcher.poll(SimTime::from_secs(1)).unwrap();
        assert!(got.is_empty());
        assert_eq!(watcher.corrupt_count(), 1);
        assert!(dir.path().join("evil.latest.corrupt").exists());
        assert!(!dir.path().join("evil.latest").exists());
    }

    #[test]
    fn two_writers_publish_concurrently_without_loss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let mut handles = Vec::new();
        for writer in ["alpha", "beta"] {
            let p = path.clone();
            handles.push(std::thread::spawn(move || {
                let mut publisher = FilesharePublisher::new(&p, writer).unwrap();
                for k in 1..=20u64 {
                    publisher
                        .publish(&[frame(writer, k, k as f64)], SimTime::from_secs(k))
                        .unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let mut watcher =
            FileshareWatcher::new(&path, LatencyModel::Fixed { delay_s: 0.0 }, 1).unwrap();
        let got = watcher.poll(SimTime::from_secs(100)).unwrap();
        // Both .latest files intact and parseable, carrying seq 20.
        assert_eq!(got.len(), 2);
        for d in &got {
            assert_eq!(d.write_seq, 20);
        }
        // Every skipped seq is accounted for: 19 gaps per writer.
        assert_eq!(watcher.overwrite_gaps(), 38);
    }

    #[test]
    fn watcher_skips_excluded_writer() {
        let dir = tempfile::tempdir().unwrap();
        let mut own = FilesharePublisher::new(dir.path(), "me").unwrap();
        own.publish(&[frame("me", 1, 1.0)], SimTime::ZERO).unwrap();
        let mut watcher =
            FileshareWatcher::new(dir.path(), LatencyModel::Fixed { delay_s: 0.0 }, 1)
                .unwrap()
                .exclude_writer("me");
        assert!(watcher.poll(SimTime::from_secs(1)).unwrap().is_empty());
    }

    #[test]
    fn header_line_format_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut publisher = FilesharePublisher::new(dir.path(), "site_a").unwrap();
        publisher
            .publish(&[frame("site_a", 1, 1.0)], SimTime::from_micros(123_456))
            .unwrap();
        let text = fs::read_to_string(dir.path().join("site_a.latest")).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "CSLF1 site_a 1 123456");
    }

    #[test]
    fn held_lock_yields_publish_conflict_after_retries() {
        let dir = tempfile::tempdir().unwrap();
        // Simulate a writer that died inside its rename window.
        fs::write(dir.path().join("a.lock"), b"").unwrap();
        let mut publisher = FilesharePublisher::new(dir.path(), "a").unwrap();
        let err = publisher
            .publish(&[frame("a", 1, 1.0)], SimTime::ZERO)
            .unwrap_err();
        assert!(matches!(err, TransportError::PublishConflict(_)), "{err}");
        // The contended version never landed.
        assert!(!dir.path().join("a.latest").exists());
    }
}
