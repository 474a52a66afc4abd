//! Binary frame wire format, big-endian throughout.
//!
//! Stream layout: a u32 payload length, then the payload:
//!
//! ```text
//! "CSL1"                     magic, 4 bytes
//! u8   kind                  0 = measurement, 1 = command
//! u64  seq
//! u64  send_sim_time_us
//! u16  sender-id length, then the bytes
//! u32  sample count
//! per sample:
//!   u16 signal-id length, then the bytes
//!   u64 sim_time_us
//!   f64 value (IEEE-754 bits)
//! ```

use crate::time::{SimTime, TimestampedSample};
use crate::transport::TransportError;

pub const MAGIC: [u8; 4] = *b"CSL1";
/// Upper bound on a single frame payload; anything larger is treated as a
/// corrupt length prefix rather than an allocation request.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Measurement,
    Command,
}

impl FrameKind {
    fn to_byte(self) -> u8 {
        match self {
            FrameKind::Measurement => 0,
            FrameKind::Command => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self, TransportError> {
        match b {
            0 => Ok(FrameKind::Measurement),
            1 => Ok(FrameKind::Command),
            other => Err(TransportError::UnknownKind(other)),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FrameKind::Measurement => "measurement",
            FrameKind::Command => "command",
        }
    }
}

/// Measurement or command batch exchanged between federates.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub seq: u64,
    pub sender_id: String,
    pub send_sim_time: SimTime,
    pub samples: Vec<TimestampedSample>,
}

impl Frame {
    pub fn new(
        kind: FrameKind,
        seq: u64,
        sender_id: impl Into<String>,
        send_sim_time: SimTime,
        samples: Vec<TimestampedSample>,
    ) -> Result<Self, TransportError> {
        if samples.is_empty() {
            return Err(TransportError::EmptySamples);
        }
        Ok(Frame {
            kind,
            seq,
            sender_id: sender_id.into(),
            send_sim_time,
            samples,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), TransportError> {
    if s.len() > u16::MAX as usize {
        return Err(TransportError::StringTooLong(s.len()));
    }
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Encode a frame: length prefix plus payload.
///
/// Wall-clock stamps are a local observation and do not travel; decoding
/// yields samples with `wall_time = None`.
pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, TransportError> {
    if frame.samples.is_empty() {
        return Err(TransportError::EmptySamples);
    }
    let mut payload = Vec::with_capacity(32 + frame.samples.len() * 24);
    payload.extend_from_slice(&MAGIC);
    payload.push(frame.kind.to_byte());
    payload.extend_from_slice(&frame.seq.to_be_bytes());
    payload.extend_from_slice(&frame.send_sim_time.as_micros().to_be_bytes());
    put_str(&mut payload, &frame.sender_id)?;
    payload.extend_from_slice(&(frame.samples.len() as u32).to_be_bytes());
    for s in &frame.samples {
        if !s.value.is_finite() {
            return Err(TransportError::NonFiniteValue);
        }
        put_str(&mut payload, &s.signal_id)?;
        payload.extend_from_slice(&s.sim_time.as_micros().to_be_bytes());
        payload.extend_from_slice(&s.value.to_bits().to_be_bytes());
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TransportError> {
        if self.pos + n > self.buf.len() {
            return Err(TransportError::Truncated {
                expected: self.pos + n,
                actual: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TransportError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TransportError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, TransportError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, TransportError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, TransportError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| TransportError::BadHeader("non-utf8 string field".into()))
    }
}

/// Decode the payload bytes (after the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<Frame, TransportError> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(TransportError::BadMagic(magic.try_into().unwrap()));
    }
    let kind = FrameKind::from_byte(r.u8()?)?;
    let seq = r.u64()?;
    let send_sim_time = SimTime::from_micros(r.u64()?);
    let sender_id = r.string()?;
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(TransportError::EmptySamples);
    }
    let mut samples = Vec::with_capacity(count.min(65_536));
    for _ in 0..count {
        let signal_id = r.string()?;
        let sim_time = SimTime::from_micros(r.u64()?);
        let value = f64::from_bits(r.u64()?);
        if !value.is_finite() {
            return Err(TransportError::NonFiniteValue);
        }
        samples.push(TimestampedSample {
            signal_id,
            sim_time,
            wall_time: None,
            value,
        });
    }
    if r.pos != payload.len() {
        return Err(TransportError::LengthMismatch {
            declared: payload.len(),
            actual: r.pos,
        });
    }
    Ok(Frame {
        kind,
        seq,
        sender_id,
        send_sim_time,
        samples,
    })
}

/// Decode one frame from the start of `buf`, returning it together with
/// the number of bytes consumed. `Ok(None)` means more bytes are needed.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Frame, usize)>, TransportError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let declared = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if declared > MAX_PAYLOAD {
        return Err(TransportError::OversizeFrame {
            declared,
            max: MAX_PAYLOAD,
        });
    }
    if buf.len() < 4 + declared {
        return Ok(None);
    }
    let frame = decode_payload(&buf[4..4 + declared])?;
    Ok(Some((frame, 4 + declared)))
}
