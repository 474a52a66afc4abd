//! Minimal Modbus-TCP subset: FC 0x03 (Read Holding Registers) and
//! FC 0x10 (Write Multiple Registers).
//!
//! This is exactly the surface the measurement/command workflow needs --
//! read measurements out of the simulator endpoint, write commands back --
//! plus a register map that binds named signals to 32-bit float register
//! pairs. The wire format is byte-exact standard MBAP + PDU, big-endian
//! throughout.

pub mod client;
pub mod codec;
pub mod regmap;
pub mod server;

pub use client::ModbusClient;
pub use codec::{
    decode_request, decode_response, encode_exception, encode_read_request, encode_read_response,
    encode_write_ack, encode_write_request, MbapHeader, Request, Response,
    EXC_ILLEGAL_DATA_ADDRESS, EXC_ILLEGAL_DATA_VALUE, FC_READ_HOLDING_REGISTERS,
    FC_WRITE_MULTIPLE_REGISTERS,
};
pub use regmap::{f32_to_registers, registers_to_f32, Binding, BindingKind, RegisterMap};
pub use server::{serve, ServerHandle};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModbusError {
    #[error("register quantity {0} out of range")]
    QuantityOutOfRange(usize),
    #[error("protocol id must be 0, got {0}")]
    ProtocolIdNonZero(u16),
    #[error("frame truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("MBAP length {declared} does not match remaining bytes {actual}")]
    LengthMismatch { declared: u16, actual: usize },
    #[error("byte count {declared} does not match payload length {actual}")]
    ByteCountMismatch { declared: u8, actual: usize },
    #[error("unsupported function code 0x{0:02X}")]
    UnknownFunction(u8),
    #[error("modbus exception: function 0x{function:02X}, code 0x{code:02X}")]
    Exception { function: u8, code: u8 },
    #[error("response transaction id {got} does not match request {expected}")]
    TransactionMismatch { expected: u16, got: u16 },
    #[error("signal {0:?} is not bound")]
    UnboundSignal(String),
    #[error("binding {0:?} overlaps an existing binding")]
    BindingOverlap(String),
    #[error("unmapped register address 0x{0:04X}")]
    UnmappedAddress(u16),
    #[error("request timed out")]
    Timeout,
    #[error("peer disconnected")]
    Disconnected,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
