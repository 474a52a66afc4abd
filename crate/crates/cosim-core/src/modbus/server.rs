//! Concurrent Modbus-TCP server around a shared register map.
//!
//! One thread per connection; the register map lock is held for the whole
//! request so every read and write is atomic at request granularity (a
//! reader can never observe half of a float pair).

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::modbus::codec::{self, frame_length};
use crate::modbus::{ModbusError, RegisterMap};

/// Handle to a running server. Dropping it leaves the server running;
/// call [`ServerHandle::stop`] for a clean shutdown.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.accept_thread.take() {
            let _ = h.join();
        }
    }
}

/// Serve `map` on `bind` (e.g. `"127.0.0.1:0"`).
pub fn serve(map: Arc<Mutex<RegisterMap>>, bind: &str) -> Result<ServerHandle, ModbusError> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));

    let stop_accept = stop.clone();
    let accept_thread = std::thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !stop_accept.load(Ordering::Acquire) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let map = map.clone();
                    let stop = stop_accept.clone();
                    workers.push(std::thread::spawn(move || {
                        let _ = serve_connection(stream, &map, &stop);
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(_) => break,
            }
        }
        for w in workers {
            let _ = w.join();
        }
    });

    Ok(ServerHandle {
        addr,
        stop,
        accept_thread: Some(accept_thread),
    })
}

fn serve_connection(
    mut stream: TcpStream,
    map: &Mutex<RegisterMap>,
    stop: &AtomicBool,
) -> Result<(), ModbusError> {
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    stream.set_nodelay(true)?;
    let mut buf: Vec<u8> = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        if stop.load(Ordering::Acquire) {
            return Ok(());
        }
        match stream.read(&mut chunk) {
            Ok(0) => return Ok(()), // peer closed
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e.into()),
        }
        while let Some(len) = frame_length(&buf) {
            let frame: Vec<u8> = buf.drain(..len).collect();
            let reply = handle_frame(map, &frame);
            match reply {
                Some(bytes) => stream.write_all(&bytes)?,
                // Undecodable framing: drop the connection, the length
                // prefix cannot be trusted any more.
                None => return Ok(()),
            }
        }
    }
}

/// Decode one request frame, apply it to the map, and encode the reply.
///
/// Returns `None` only for frames too malformed to answer (the TCP path
/// then drops the connection). Shared by the TCP server and the in-process
/// virtual link so both speak exactly the same bytes.
pub fn handle_frame(map: &Mutex<RegisterMap>, frame: &[u8]) -> Option<Vec<u8>> {
    let (hdr, request) = match codec::decode_request(frame) {
        Ok(x) => x,
        Err(ModbusError::UnknownFunction(fc)) => {
            let txn = u16::from_be_bytes([frame[0], frame[1]]);
            return Some(codec::encode_exception(
                txn,
                frame[6],
                fc,
                codec::EXC_ILLEGAL_FUNCTION,
            ));
        }
        Err(_) => return None,
    };
    // Lock held across decode-apply-encode: per-request atomicity.
    let response = map.lock().unwrap().apply(&request);
    let bytes = match response {
        codec::Response::ReadHoldingRegisters { registers } => {
            codec::encode_read_response(hdr.transaction_id, hdr.unit_id, &registers).ok()?
        }
        codec::Response::WriteMultipleRegisters { start, quantity } => {
            codec::encode_write_ack(hdr.transaction_id, hdr.unit_id, start, quantity).ok()?
        }
        codec::Response::Exception { function, code } => {
            codec::encode_exception(hdr.transaction_id, hdr.unit_id, function, code)
        }
    };
    Some(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modbus::regmap::BindingKind;

    #[test]
    fn handle_frame_read_write_cycle() {
        let map = Mutex::new(RegisterMap::new());
        map.lock()
            .unwrap()
            .bind("x", 0, BindingKind::Command)
            .unwrap();

        let wr =
            codec::encode_write_request(7, 1, 0, &crate::modbus::f32_to_registers(2.5)).unwrap();
        let ack = handle_frame(&map, &wr).unwrap();
        let (_, resp) = codec::decode_response(&ack).unwrap();
        assert_eq!(
            resp,
            codec::Response::WriteMultipleRegisters {
                start: 0,
                quantity: 2
            }
        );

        let rd = codec::encode_read_request(8, 1, 0, 2).unwrap();
        let out = handle_frame(&map, &rd).unwrap();
        let (_, resp) = codec::decode_response(&out).unwrap();
        match resp {
            codec::Response::ReadHoldingRegisters { registers } => {
                assert_eq!(
                    crate::modbus::registers_to_f32([registers[0], registers[1]]),
                    2.5
                );
            }
            other => panic!("unexpected response {other:?}"),
        }
    }

    #[test]
    fn handle_frame_unknown_function_maps_to_exception() {
        let map = Mutex::new(RegisterMap::new());
        let mut frame = codec::encode_read_request(3, 1, 0, 1).unwrap();
        frame[7] = 0x2B;
        let reply = handle_frame(&map, &frame).unwrap();
        let (_, resp) = codec::decode_response(&reply).unwrap();
        assert_eq!(
            resp,
            codec::Response::Exception {
                function: 0x2B,
                code: codec::EXC_ILLEGAL_FUNCTION
            }
        );
    }
}
