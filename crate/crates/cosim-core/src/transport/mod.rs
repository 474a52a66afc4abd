//! Inter-federate frame exchange.
//!
//! Three transports sit behind the same [`Frame`] wire format:
//!
//! - [`socket`]: length-prefixed framed TCP, the VPN-class low-latency path;
//! - [`fileshare`]: shared-directory exchange with injected sync delay, the
//!   cloud-drive-class path (latest-state semantics, overwrites detected);
//! - [`loopback`]: in-process pair with deterministic injected latency for
//!   virtual-time scenarios.
//!
//! Every transport preserves per-sender order and never delivers a frame
//! before it was sent.

pub mod fileshare;
pub mod frame;
pub mod latency;
pub mod loopback;
pub mod socket;

pub use fileshare::{FileshareDelivery, FilesharePublisher, FileshareWatcher};
pub use frame::{decode_frame, encode_frame, Frame, FrameKind};
pub use latency::LatencyModel;
pub use loopback::{loopback_pair, Delivery, LoopbackEndpoint};
pub use socket::{FramedListener, FramedReceiver, FramedSender, FramedSocket};

use std::collections::BTreeMap;

use thiserror::Error;

/// Default port for the framed-socket path.
pub const DEFAULT_SOCKET_PORT: u16 = 8602;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("bad magic {0:02X?}")]
    BadMagic([u8; 4]),
    #[error("frame truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("frame length {declared} exceeds the {max} byte limit")]
    OversizeFrame { declared: usize, max: usize },
    #[error("declared payload length {declared} does not match content ({actual} consumed)")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("frame must carry at least one sample")]
    EmptySamples,
    #[error("sample value must be finite")]
    NonFiniteValue,
    #[error("string field too long ({0} bytes)")]
    StringTooLong(usize),
    #[error("invalid latency model: {0}")]
    InvalidLatencyModel(String),
    #[error("peer disconnected")]
    Disconnected,
    #[error("publish conflict on {0}: lock held after retries")]
    PublishConflict(String),
    #[error("corrupt shared file {0} (quarantined)")]
    CorruptFile(String),
    #[error("bad shared-file header: {0}")]
    BadHeader(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Receiver-side check that per-sender, per-kind sequence numbers strictly
/// increase. Gaps are counted (fileshare overwrites skip versions); any
/// duplicate or regression is an error.
#[derive(Debug, Default)]
pub struct SeqTracker {
    last: BTreeMap<(String, FrameKind), u64>,
    gaps: u64,
}

impl SeqTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, frame: &Frame) -> Result<(), TransportError> {
        let key = (frame.sender_id.clone(), frame.kind);
        match self.last.get(&key) {
            Some(&prev) if frame.seq <= prev => Err(TransportError::BadHeader(format!(
                "sequence regression for {}/{:?}: {} after {}",
                frame.sender_id, frame.kind, frame.seq, prev
            ))),
            Some(&prev) => {
                self.gaps += frame.seq - prev - 1;
                self.last.insert(key, frame.seq);
                Ok(())
            }
            None => {
                self.gaps += frame.seq.saturating_sub(1);
                self.last.insert(key, frame.seq);
                Ok(())
            }
        }
    }

    pub fn gaps(&self) -> u64 {
        self.gaps
    }
}
