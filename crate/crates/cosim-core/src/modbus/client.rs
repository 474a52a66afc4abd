//! Blocking Modbus-TCP client, single connection, with timeout.
//!
//! Connection-level failures (refused, reset, timeout) surface as their own
//! error variants, distinct from protocol errors and from Modbus exception
//! responses, so callers can decide between retrying and giving up.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::modbus::codec::{self, Response};
use crate::modbus::{f32_to_registers, registers_to_f32, ModbusError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(1000);
pub const DEFAULT_UNIT_ID: u8 = 1;

pub struct ModbusClient {
    stream: TcpStream,
    unit: u8,
    next_txn: u16,
}

impl ModbusClient {
    pub fn connect(
        addr: impl ToSocketAddrs,
        unit: u8,
        timeout: Duration,
    ) -> Result<Self, ModbusError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(ErrorKind::InvalidInput, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(ModbusClient {
            stream,
            unit,
            next_txn: 1,
        })
    }

    pub fn read_registers(&mut self, start: u16, quantity: u16) -> Result<Vec<u16>, ModbusError> {
        let txn = self.take_txn();
        let req = codec::encode_read_request(txn, self.unit, start, quantity)?;
        match self.exchange(txn, &req)? {
            Response::ReadHoldingRegisters { registers } => {
                if registers.len() != quantity as usize {
                    return Err(ModbusError::QuantityOutOfRange(registers.len()));
                }
                Ok(registers)
            }
            Response::Exception { function, code } => {
                Err(ModbusError::Exception { function, code })
            }
            _ => Err(ModbusError::UnknownFunction(0)),
        }
    }

    pub fn write_registers(&mut self, start: u16, values: &[u16]) -> Result<(), ModbusError> {
        let txn = self.take_txn();
        let req = codec::encode_write_request(txn, self.unit, start, values)?;
        match self.exchange(txn, &req)? {
            Response::WriteMultipleRegisters { .. } => Ok(()),
            Response::Exception { function, code } => {
                Err(ModbusError::Exception { function, code })
            }
            _ => Err(ModbusError::UnknownFunction(0)),
        }
    }

    /// Read the float pair at `base`.
    pub fn read_f32(&mut self, base: u16) -> Result<f32, ModbusError> {
        let regs = self.read_registers(base, 2)?;
        Ok(registers_to_f32([regs[0], regs[1]]))
    }

    /// Write the float pair at `base`.
    pub fn write_f32(&mut self, base: u16, value: f32) -> Result<(), ModbusError> {
        self.write_registers(base, &f32_to_registers(value))
    }

    fn take_txn(&mut self) -> u16 {
        let t = self.next_txn;
        self.next_txn = self.next_txn.wrapping_add(1);
        t
    }

    fn exchange(&mut self, txn: u16, request: &[u8]) -> Result<Response, ModbusError> {
        self.stream.write_all(request).map_err(map_io)?;
        let frame = self.read_adu()?;
        let (hdr, resp) = codec::decode_response(&frame)?;
        if hdr.transaction_id != txn {
            return Err(ModbusError::TransactionMismatch {
                expected: txn,
                got: hdr.transaction_id,
            });
        }
        Ok(resp)
    }

    fn read_adu(&mut self) -> Result<Vec<u8>, ModbusError> {
        let mut head = [0u8; 7];
        self.read_exact(&mut head)?;
        let declared = u16::from_be_bytes([head[4], head[5]]) as usize;
        if declared == 0 {
            return Err(ModbusError::LengthMismatch {
                declared: 0,
                actual: 0,
            });
        }
        let mut rest = vec![0u8; declared - 1]; // unit id already consumed
        self.read_exact(&mut rest)?;
        let mut frame = head.to_vec();
        frame.extend_from_slice(&rest);
        Ok(frame)
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), ModbusError> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.stream.read(&mut buf[filled..]) {
                Ok(0) => return Err(ModbusError::Disconnected),
                Ok(n) => filled += n,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(ModbusError::Timeout)
                }
                Err(e) => return Err(map_io(e)),
            }
        }
        Ok(())
    }
}

fn map_io(e: std::io::Error) -> ModbusError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => ModbusError::Timeout,
        ErrorKind::ConnectionReset | ErrorKind::BrokenPipe | ErrorKind::UnexpectedEof => {
            ModbusError::Disconnected
        }
        _ => ModbusError::Io(e),
    }
}
