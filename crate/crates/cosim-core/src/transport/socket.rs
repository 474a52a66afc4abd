//! Length-prefixed framed TCP endpoints.
//!
//! The sender side writes blocking; the receiver side polls without
//! blocking, buffering partial frames across polls. The two halves can be
//! used concurrently from different threads after [`FramedSocket::into_split`].

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::transport::frame::{decode_frame, encode_frame};
use crate::transport::{Frame, TransportError};

pub struct FramedListener {
    listener: TcpListener,
}

impl FramedListener {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Ok(FramedListener {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.listener.local_addr()?)
    }

    /// Block until a peer connects.
    pub fn accept(&self) -> Result<FramedSocket, TransportError> {
        let (stream, _) = self.listener.accept()?;
        FramedSocket::from_stream(stream)
    }

    /// Accept with a deadline, for accept loops that need to stay stoppable.
    pub fn accept_timeout(
        &self,
        timeout: Duration,
    ) -> Result<Option<FramedSocket>, TransportError> {
        self.listener.set_nonblocking(true)?;
        let deadline = std::time::Instant::now() + timeout;
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    self.listener.set_nonblocking(false)?;
                    return Ok(Some(FramedSocket::from_stream(stream)?));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if std::time::Instant::now() >= deadline {
                        self.listener.set_nonblocking(false)?;
                        return Ok(None);
                    }
                    std::thread::sleep(Duration::from_millis(1));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// A connected framed socket: blocking sends, non-blocking polls.
pub struct FramedSocket {
    stream: TcpStream,
    rx: Vec<u8>,
    /// Frames whose payload failed to decode; skipped via the length prefix.
    skipped: u64,
}

impl FramedSocket {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    pub fn connect_timeout(addr: &SocketAddr, timeout: Duration) -> Result<Self, TransportError> {
        Self::from_stream(TcpStream::connect_timeout(addr, timeout)?)
    }

    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        stream.set_nonblocking(true)?;
        Ok(FramedSocket {
            stream,
            rx: Vec::new(),
            skipped: 0,
        })
    }

    pub fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        let bytes = encode_frame(frame)?;
        write_all_blocking(&mut self.stream, &bytes)
    }

    /// Return every complete frame currently buffered, without blocking.
    /// Disconnection is its own condition so callers can reconnect.
    pub fn poll(&mut self) -> Result<Vec<Frame>, TransportError> {
        let mut chunk = [0u8; 16 * 1024];
        loop {
            match self.stream.read(&mut chunk) {
                Ok(0) => {
                    if self.rx.is_empty() {
                        return Err(TransportError::Disconnected);
                    }
                    break; // flush what we have; next poll reports the close
                }
                Ok(n) => self.rx.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e)
                    if matches!(e.kind(), ErrorKind::ConnectionReset | ErrorKind::BrokenPipe) =>
                {
                    return Err(TransportError::Disconnected)
                }
                Err(e) => return Err(e.into()),
            }
        }
        self.drain_frames()
    }

    fn drain_frames(&mut self) -> Result<Vec<Frame>, TransportError> {
        let mut out = Vec::new();
        loop {
            match decode_frame(&self.rx) {
                Ok(Some((frame, consumed))) => {
                    self.rx.drain(..consumed);
                    out.push(frame);
                }
                Ok(None) => break,
                // The length prefix is intact, so we can skip exactly one
                // bad payload and resynchronize on the next boundary.
                Err(TransportError::OversizeFrame { .. }) => {
                    return Err(TransportError::Disconnected)
                }
                Err(_) => {
                    let declared =
                        u32::from_be_bytes([self.rx[0], self.rx[1], self.rx[2], self.rx[3]])
                            as usize;
                    self.rx.drain(..4 + declared);
                    self.skipped += 1;
                }
            }
        }
        Ok(out)
    }

    /// Count of undecodable frames skipped at length-prefix boundaries.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Split into independently usable sender and receiver halves.
    pub fn into_split(self) -> Result<(FramedSender, FramedReceiver), TransportError> {
        let tx = self.stream.try_clone()?;
        Ok((
            FramedSender { stream: tx },
            FramedReceiver {
                inner: FramedSocket {
                    stream: self.stream,
                    rx: self.rx,
                    skipped: self.skipped,
                },
            },
        ))
    }

    pub fn peer_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.stream.peer_addr()?)
    }
}

pub struct FramedSender {
    stream: TcpStream,
}

impl FramedSender {
    pub fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        let bytes = encode_frame(frame)?;
        write_all_blocking(&mut self.stream, &bytes)
    }
}

pub struct FramedReceiver {
    inner: FramedSocket,
}

impl FramedReceiver {
    pub fn poll(&mut self) -> Result<Vec<Frame>, TransportError> {
        self.inner.poll()
    }

    pub fn skipped(&self) -> u64 {
        self.inner.skipped
    }
}

fn write_all_blocking(stream: &mut TcpStream, mut bytes: &[u8]) -> Result<(), TransportError> {
    while !bytes.is_empty() {
        match stream.write(bytes) {
            Ok(0) => return Err(TransportError::Disconnected),
            Ok(n) => bytes = &bytes[n..],
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_micros(200));
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) if matches!(e.kind(), ErrorKind::ConnectionReset | ErrorKind::BrokenPipe) => {
                return Err(TransportError::Disconnected)
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
