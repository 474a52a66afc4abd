//! Holding-register store with named float bindings.
//!
//! Each bound signal occupies exactly two consecutive registers holding an
//! IEEE-754 single in big-endian word order (high word at the base
//! address), matching the byte order of the rest of the frame.

use std::collections::BTreeMap;

use crate::modbus::codec::{Request, Response, EXC_ILLEGAL_DATA_ADDRESS};
use crate::modbus::ModbusError;

/// Split a float into a big-endian-ordered register pair.
pub fn f32_to_registers(x: f32) -> [u16; 2] {
    let bits = x.to_bits();
    [(bits >> 16) as u16, bits as u16]
}

/// Reassemble a float from its register pair. Bit-exact round trip.
pub fn registers_to_f32(regs: [u16; 2]) -> f32 {
    f32::from_bits(((regs[0] as u32) << 16) | regs[1] as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingKind {
    Measurement,
    Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binding {
    pub base: u16,
    pub kind: BindingKind,
}

/// Register store plus signal bindings. Reads and writes only touch bound
/// addresses; anything else is an illegal-data-address condition.
#[derive(Debug, Clone, Default)]
pub struct RegisterMap {
    registers: BTreeMap<u16, u16>,
    bindings: BTreeMap<String, Binding>,
}

impl RegisterMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bind `signal` to the float pair at `base`. Bindings must not overlap.
    pub fn bind(
        &mut self,
        signal: impl Into<String>,
        base: u16,
        kind: BindingKind,
    ) -> Result<(), ModbusError> {
        let signal = signal.into();
        let span = [
            base,
            base.checked_add(1)
                .ok_or(ModbusError::UnmappedAddress(base))?,
        ];
        for b in self.bindings.values() {
            let other = [b.base, b.base + 1];
            if span[0] <= other[1] && other[0] <= span[1] {
                return Err(ModbusError::BindingOverlap(signal));
            }
        }
        self.registers.insert(span[0], 0);
        self.registers.insert(span[1], 0);
        self.bindings.insert(signal, Binding { base, kind });
        Ok(())
    }

    pub fn binding(&self, signal: &str) -> Option<Binding> {
        self.bindings.get(signal).copied()
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, Binding)> {
        self.bindings.iter().map(|(s, b)| (s.as_str(), *b))
    }

    pub fn write_f32(&mut self, signal: &str, value: f32) -> Result<(), ModbusError> {
        let b = self
            .binding(signal)
            .ok_or_else(|| ModbusError::UnboundSignal(signal.to_string()))?;
        let regs = f32_to_registers(value);
        self.registers.insert(b.base, regs[0]);
        self.registers.insert(b.base + 1, regs[1]);
        Ok(())
    }

    pub fn read_f32(&self, signal: &str) -> Result<f32, ModbusError> {
        let b = self
            .binding(signal)
            .ok_or_else(|| ModbusError::UnboundSignal(signal.to_string()))?;
        Ok(registers_to_f32([
            *self.registers.get(&b.base).unwrap_or(&0),
            *self.registers.get(&(b.base + 1)).unwrap_or(&0),
        ]))
    }

    /// Raw register read; every address in the range must be mapped.
    pub fn read_registers(&self, start: u16, quantity: u16) -> Result<Vec<u16>, ModbusError> {
        let mut out = Vec::with_capacity(quantity as usize);
        for off in 0..quantity {
            let addr = start
                .checked_add(off)
                .ok_or(ModbusError::UnmappedAddress(u16::MAX))?;
            out.push(
                *self
                    .registers
                    .get(&addr)
                    .ok_or(ModbusError::UnmappedAddress(addr))?,
            );
        }
        Ok(out)
    }

    /// Raw register write; every address in the range must be mapped.
    pub fn write_registers(&mut self, start: u16, values: &[u16]) -> Result<(), ModbusError> {
        // Validate the whole range first so a partial write never lands.
        for off in 0..values.len() {
            let addr = start
                .checked_add(off as u16)
                .ok_or(ModbusError::UnmappedAddress(u16::MAX))?;
            if !self.registers.contains_key(&addr) {
                return Err(ModbusError::UnmappedAddress(addr));
            }
        }
        for (off, v) in values.iter().enumerate() {
            self.registers.insert(start + off as u16, *v);
        }
        Ok(())
    }

    /// Apply one decoded request, producing the response the server sends.
    /// Unmapped addresses come back as illegal-data-address exceptions.
    pub fn apply(&mut self, request: &Request) -> Response {
        match request {
            Request::ReadHoldingRegisters { start, quantity } => {
                match self.read_registers(*start, *quantity) {
                    Ok(registers) => Response::ReadHoldingRegisters { registers },
                    Err(_) => Response::Exception {
                        function: crate::modbus::codec::FC_READ_HOLDING_REGISTERS,
                        code: EXC_ILLEGAL_DATA_ADDRESS,
                    },
                }
            }
            Request::WriteMultipleRegisters { start, values } => {
                match self.write_registers(*start, values) {
                    Ok(()) => Response::WriteMultipleRegisters {
                        start: *start,
                        quantity: values.len() as u16,
                    },
                    Err(_) => Response::Exception {
                        function: crate::modbus::codec::FC_WRITE_MULTIPLE_REGISTERS,
                        code: EXC_ILLEGAL_DATA_ADDRESS,
                    },
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_register_encoding() {
        assert_eq!(f32_to_registers(1.0), [0x3F80, 0x0000]);
        assert_eq!(f32_to_registers(2.0), [0x4000, 0x0000]);
        assert_eq!(f32_to_registers(0.0), [0x0000, 0x0000]);
    }

    #[test]
    fn float_round_trip_bit_exact() {
        for v in [1.0f32, -0.0, 2.5e-12, f32::MAX, 1.0e-45, 1776.25] {
            let rt = registers_to_f32(f32_to_registers(v));
            assert_eq!(rt.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn bindings_must_not_overlap() {
        let mut m = RegisterMap::new();
        m.bind("a", 0, BindingKind::Measurement).unwrap();
        m.bind("b", 2, BindingKind::Measurement).unwrap();
        assert!(matches!(
            m.bind("c", 1, BindingKind::Command),
            Err(ModbusError::BindingOverlap(_))
        ));
        assert!(matches!(
            m.bind("d", 3, BindingKind::Command),
            Err(ModbusError::BindingOverlap(_))
        ));
    }

    #[test]
    fn bound_write_then_read() {
        let mut m = RegisterMap::new();
        m.bind("pv_setpoint", 10, BindingKind::Command).unwrap();
        m.write_f32("pv_setpoint", 2.5).unwrap();
        assert_eq!(m.read_f32("pv_setpoint").unwrap(), 2.5);
    }

    #[test]
    fn unmapped_read_is_an_error() {
        let m = RegisterMap::new();
        assert!(matches!(
            m.read_registers(0, 2),
            Err(ModbusError::UnmappedAddress(0))
        ));
    }

    #[test]
    fn apply_maps_unmapped_to_exception() {
        let mut m = RegisterMap::new();
        let resp = m.apply(&Request::ReadHoldingRegisters {
            start: 40,
            quantity: 2,
        });
        assert_eq!(
            resp,
            Response::Exception {
                function: 0x03,
                code: EXC_ILLEGAL_DATA_ADDRESS
            }
        );
    }

    #[test]
    fn partial_writes_never_land() {
        let mut m = RegisterMap::new();
        m.bind("a", 0, BindingKind::Command).unwrap();
        // Range [1, 2] hits unmapped address 2.
        assert!(m.write_registers(1, &[7, 8]).is_err());
        assert_eq!(m.read_registers(0, 2).unwrap(), vec![0, 0]);
    }
}
