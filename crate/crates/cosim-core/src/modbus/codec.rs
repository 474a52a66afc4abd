//! MBAP + PDU encode/decode. All multi-byte fields are big-endian.

use crate::modbus::ModbusError;

pub const FC_READ_HOLDING_REGISTERS: u8 = 0x03;
pub const FC_WRITE_MULTIPLE_REGISTERS: u8 = 0x10;

pub const EXC_ILLEGAL_FUNCTION: u8 = 0x01;
pub const EXC_ILLEGAL_DATA_ADDRESS: u8 = 0x02;
pub const EXC_ILLEGAL_DATA_VALUE: u8 = 0x03;

pub const MAX_READ_QUANTITY: usize = 125;
pub const MAX_WRITE_QUANTITY: usize = 123;

/// Modbus-TCP application header. `length` counts the unit id plus the PDU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MbapHeader {
    pub transaction_id: u16,
    pub protocol_id: u16,
    pub length: u16,
    pub unit_id: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    ReadHoldingRegisters { start: u16, quantity: u16 },
    WriteMultipleRegisters { start: u16, values: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    ReadHoldingRegisters { registers: Vec<u16> },
    WriteMultipleRegisters { start: u16, quantity: u16 },
    Exception { function: u8, code: u8 },
}

fn put_header(out: &mut Vec<u8>, txn: u16, unit: u8, pdu_len: usize) {
    out.extend_from_slice(&txn.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&((pdu_len + 1) as u16).to_be_bytes());
    out.push(unit);
}

pub fn encode_read_request(
    txn: u16,
    unit: u8,
    start: u16,
    quantity: u16,
) -> Result<Vec<u8>, ModbusError> {
    if quantity == 0 || quantity as usize > MAX_READ_QUANTITY {
        return Err(ModbusError::QuantityOutOfRange(quantity as usize));
    }
    let mut out = Vec::with_capacity(12);
    put_header(&mut out, txn, unit, 5);
    out.push(FC_READ_HOLDING_REGISTERS);
    out.extend_from_slice(&start.to_be_bytes());
    out.extend_from_slice(&quantity.to_be_bytes());
    Ok(out)
}

pub fn encode_read_response(txn: u16, unit: u8, registers: &[u16]) -> Result<Vec<u8>, ModbusError> {
    if registers.is_empty() || registers.len() > MAX_READ_QUANTITY {
        return Err(ModbusError::QuantityOutOfRange(registers.len()));
    }
    let mut out = Vec::with_capacity(9 + 2 * registers.len());
    put_header(&mut out, txn, unit, 2 + 2 * registers.len());
    out.push(FC_READ_HOLDING_REGISTERS);
    out.push((2 * registers.len()) as u8);
    for r in registers {
        out.extend_from_slice(&r.to_be_bytes());
    }
    Ok(out)
}

pub fn encode_write_request(
    txn: u16,
    unit: u8,
    start: u16,
    values: &[u16],
) -> Result<Vec<u8>, ModbusError> {
    if values.is_empty() || values.len() > MAX_WRITE_QUANTITY {
        return Err(ModbusError::QuantityOutOfRange(values.len()));
    }
    let mut out = Vec::with_capacity(13 + 2 * values.len());
    put_header(&mut out, txn, unit, 6 + 2 * values.len());
    out.push(FC_WRITE_MULTIPLE_REGISTERS);
    out.extend_from_slice(&start.to_be_bytes());
    out.extend_from_slice(&(values.len() as u16).to_be_bytes());
    out.push((2 * values.len()) as u8);
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

pub fn encode_write_ack(
    txn: u16,
    unit: u8,
    start: u16,
    quantity: u16,
) -> Result<Vec<u8>, ModbusError> {
    if quantity == 0 || quantity as usize > MAX_WRITE_QUANTITY {
        return Err(ModbusError::QuantityOutOfRange(quantity as usize));
    }
    let mut out = Vec::with_capacity(12);
    put_header(&mut out, txn, unit, 5);
    out.push(FC_WRITE_MULTIPLE_REGISTERS);
    out.extend_from_slice(&start.to_be_bytes());
    out.extend_from_slice(&quantity.to_be_bytes());
    Ok(out)
}

pub fn encode_exception(txn: u16, unit: u8, function: u8, code: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(9);
    put_header(&mut out, txn, unit, 2);
    out.push(function | 0x80);
    out.push(code);
    out
}

/// If `buf` starts with a complete ADU, return its total length.
pub fn frame_length(buf: &[u8]) -> Option<usize> {
    if buf.len() < 6 {
        return None;
    }
    let declared = u16::from_be_bytes([buf[4], buf[5]]) as usize;
    let total = 6 + declared;
    (buf.len() >= total).then_some(total)
}

/// Parse the MBAP header and verify the length field against the actual
/// frame size. `frame` must be exactly one ADU.
fn decode_header(frame: &[u8]) -> Result<MbapHeader, ModbusError> {
    if frame.len() < 8 {
        return Err(ModbusError::Truncated {
            expected: 8,
            actual: frame.len(),
        });
    }
    let hdr = MbapHeader {
        transaction_id: u16::from_be_bytes([frame[0], frame[1]]),
        protocol_id: u16::from_be_bytes([frame[2], frame[3]]),
        length: u16::from_be_bytes([frame[4], frame[5]]),
        unit_id: frame[6],
    };
    if hdr.protocol_id != 0 {
        return Err(ModbusError::ProtocolIdNonZero(hdr.protocol_id));
    }
    let actual = frame.len() - 6;
    if hdr.length as usize != actual {
        return Err(ModbusError::LengthMismatch {
            declared: hdr.length,
            actual,
        });
    }
    Ok(hdr)
}

pub fn decode_request(frame: &[u8]) -> Result<(MbapHeader, Request), ModbusError> {
    let hdr = decode_header(frame)?;
    let pdu = &frame[7..];
    match pdu[0] {
        FC_READ_HOLDING_REGISTERS => {
            if pdu.len() != 5 {
                return Err(ModbusError::Truncated {
                    expected: 5,
                    actual: pdu.len(),
                });
            }
            let start = u16::from_be_bytes([pdu[1], pdu[2]]);
            let quantity = u16::from_be_bytes([pdu[3], pdu[4]]);
            if quantity == 0 || quantity as usize > MAX_READ_QUANTITY {
                return Err(ModbusError::QuantityOutOfRange(quantity as usize));
            }
            Ok((hdr, Request::ReadHoldingRegisters { start, quantity }))
        }
        FC_WRITE_MULTIPLE_REGISTERS => {
            if pdu.len() < 6 {
                return Err(ModbusError::Truncated {
                    expected: 6,
                    actual: pdu.len(),
                });
            }
            let start = u16::from_be_bytes([pdu[1], pdu[2]]);
            let quantity = u16::from_be_bytes([pdu[3], pdu[4]]) as usize;
            let byte_count = pdu[5];
            if quantity == 0 || quantity > MAX_WRITE_QUANTITY {
                return Err(ModbusError::QuantityOutOfRange(quantity));
            }
            let payload = &pdu[6..];
            if byte_count as usize != 2 * quantity || payload.len() != byte_count as usize {
                return Err(ModbusError::ByteCountMismatch {
                    declared: byte_count,
                    actual: payload.len(),
                });
            }
            let values = payload
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            Ok((hdr, Request::WriteMultipleRegisters { start, values }))
        }
        other => Err(ModbusError::UnknownFunction(other)),
    }
}

pub fn decode_response(frame: &[u8]) -> Result<(MbapHeader, Response), ModbusError> {
    let hdr = decode_header(frame)?;
    let pdu = &frame[7..];
    let function = pdu[0];
    if function & 0x80 != 0 {
        if pdu.len() != 2 {
            return Err(ModbusError::Truncated {
                expected: 2,
                actual: pdu.len(),
            });
        }
        return Ok((
            hdr,
            Response::Exception {
                function: function & 0x7F,
                code: pdu[1],
            },
        ));
    }
    match function {
        FC_READ_HOLDING_REGISTERS => {
            if pdu.len() < 2 {
                return Err(ModbusError::Truncated {
                    expected: 2,
                    actual: pdu.len(),
                });
            }
            let byte_count = pdu[1];
            let payload = &pdu[2..];
            if byte_count as usize != payload.len() || !byte_count.is_multiple_of(2) {
                return Err(ModbusError::ByteCountMismatch {
                    declared: byte_count,
                    actual: payload.len(),
                });
            }
            let registers = payload
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            Ok((hdr, Response::ReadHoldingRegisters { registers }))
        }
        FC_WRITE_MULTIPLE_REGISTERS => {
            if pdu.len() != 5 {
                return Err(ModbusError::Truncated {
                    expected: 5,
                    actual: pdu.len(),
                });
            }
            let start = u16::from_be_bytes([pdu[1], pdu[2]]);
            let quantity = u16::from_be_bytes([pdu[3], pdu[4]]);
            Ok((hdr, Response::WriteMultipleRegisters { start, quantity }))
        }
        other => Err(ModbusError::UnknownFunction(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_read_request() {
        let bytes = encode_read_request(1, 1, 0, 2).unwrap();
        assert_eq!(
            bytes,
            [0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x03, 0x00, 0x00, 0x00, 0x02]
        );
        let (hdr, req) = decode_request(&bytes).unwrap();
        assert_eq!(hdr.transaction_id, 1);
        assert_eq!(hdr.length, 6);
        assert_eq!(
            req,
            Request::ReadHoldingRegisters {
                start: 0,
                quantity: 2
            }
        );
    }

    #[test]
    fn golden_read_response() {
        let bytes = encode_read_response(1, 1, &[0x3F80, 0x0000]).unwrap();
        assert_eq!(
            bytes,
            [0x00, 0x01, 0x00, 0x00, 0x00, 0x07, 0x01, 0x03, 0x04, 0x3F, 0x80, 0x00, 0x00]
        );
        let (_, resp) = decode_response(&bytes).unwrap();
        assert_eq!(
            resp,
            Response::ReadHoldingRegisters {
                registers: vec![0x3F80, 0x0000]
            }
        );
    }

    #[test]
    fn golden_write_request() {
        let bytes = encode_write_request(2, 1, 0x000A, &[0x4000, 0x0000]).unwrap();
        assert_eq!(
            bytes,
            [
                0x00, 0x02, 0x00, 0x00, 0x00, 0x0B, 0x01, 0x10, 0x00, 0x0A, 0x00, 0x02, 0x04, 0x40,
                0x00, 0x00, 0x00
            ]
        );
        let (_, req) = decode_request(&bytes).unwrap();
        assert_eq!(
            req,
            Request::WriteMultipleRegisters {
                start: 0x000A,
                values: vec![0x4000, 0x0000]
            }
        );
    }

    #[test]
    fn golden_write_ack() {
        let bytes = encode_write_ack(2, 1, 0x000A, 2).unwrap();
        assert_eq!(
            bytes,
            [0x00, 0x02, 0x00, 0x00, 0x00, 0x06, 0x01, 0x10, 0x00, 0x0A, 0x00, 0x02]
        );
        let (_, resp) = decode_response(&bytes).unwrap();
        assert_eq!(
            resp,
            Response::WriteMultipleRegisters {
                start: 0x000A,
                quantity: 2
            }
        );
    }

    #[test]
    fn golden_exception_response() {
        let bytes = encode_exception(1, 1, FC_READ_HOLDING_REGISTERS, EXC_ILLEGAL_DATA_ADDRESS);
        assert_eq!(
            bytes,
            [0x00, 0x01, 0x00, 0x00, 0x00, 0x03, 0x01, 0x83, 0x02]
        );
        let (_, resp) = decode_response(&bytes).unwrap();
        assert_eq!(
            resp,
            Response::Exception {
                function: FC_READ_HOLDING_REGISTERS,
                code: EXC_ILLEGAL_DATA_ADDRESS
            }
        );
    }

    #[test]
    fn zero_quantity_rejected() {
        assert!(matches!(
            encode_read_request(1, 1, 0, 0),
            Err(ModbusError::QuantityOutOfRange(0))
        ));
        assert!(matches!(
            encode_read_request(1, 1, 0, 126),
            Err(ModbusError::QuantityOutOfRange(126))
        ));
        assert!(matches!(
            encode_write_request(1, 1, 0, &[]),
            Err(ModbusError::QuantityOutOfRange(0))
        ));
    }

    #[test]
    fn nonzero_protocol_id_rejected() {
        let mut bytes = encode_read_request(1, 1, 0, 2).unwrap();
        bytes[2] = 0xDE;
        bytes[3] = 0xAD;
        assert!(matches!(
            decode_request(&bytes),
            Err(ModbusError::ProtocolIdNonZero(0xDEAD))
        ));
    }

    #[test]
    fn truncated_frame_rejected() {
        let bytes = encode_read_request(1, 1, 0, 2).unwrap();
        assert!(matches!(
            decode_request(&bytes[..7]),
            Err(ModbusError::Truncated { .. })
        ));
    }

    #[test]
    fn length_field_must_match_remaining_bytes() {
        let mut bytes = encode_read_request(1, 1, 0, 2).unwrap();
        bytes[5] = 0x09;
        assert!(matches!(
            decode_request(&bytes),
            Err(ModbusError::LengthMismatch { declared: 9, .. })
        ));
    }

    #[test]
    fn write_byte_count_mismatch_rejected() {
        let mut bytes = encode_write_request(1, 1, 0, &[1, 2]).unwrap();
        bytes[12] = 0x06; // claims 6 payload bytes, actual 4
        assert!(matches!(
            decode_request(&bytes),
            Err(ModbusError::ByteCountMismatch { .. })
        ));
    }

    #[test]
    fn unknown_function_rejected() {
        let mut bytes = encode_read_request(1, 1, 0, 2).unwrap();
        bytes[7] = 0x2B;
        assert!(matches!(
            decode_request(&bytes),
            Err(ModbusError::UnknownFunction(0x2B))
        ));
    }

    #[test]
    fn frame_length_parses_prefix() {
        let bytes = encode_write_request(9, 1, 4, &[7, 8, 9]).unwrap();
        assert_eq!(frame_length(&bytes), Some(bytes.len()));
        assert_eq!(frame_length(&bytes[..5]), None);
        assert_eq!(frame_length(&bytes[..bytes.len() - 1]), None);
    }
}
