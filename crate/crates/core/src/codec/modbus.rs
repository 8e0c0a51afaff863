use alloc::vec::Vec;

use super::{crc16_modbus, CodecError};

/// Address, function code and a two-byte CRC.
pub const MIN_FRAME_LEN: usize = 4;

/// A Modbus-RTU application data unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModbusFrame {
    pub address: u8,
    pub function: u8,
    pub payload: Vec<u8>,
    /// CRC as carried on the wire (not necessarily valid).
    pub crc: u16,
}

impl ModbusFrame {
    /// Build a frame with a freshly computed CRC.
    pub fn new(address: u8, function: u8, payload: Vec<u8>) -> Self {
        let mut frame = ModbusFrame {
            address,
            function,
            payload,
            crc: 0,
        };
        frame.crc = frame.expected_crc();
        frame
    }

    /// Split raw bytes into fields. The CRC is not checked here.
    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < MIN_FRAME_LEN {
            return Err(CodecError::Framing {
                expected: MIN_FRAME_LEN,
                actual: bytes.len(),
            });
        }
        let n = bytes.len();
        Ok(ModbusFrame {
            address: bytes[0],
            function: bytes[1],
            payload: bytes[2..n - 2].to_vec(),
            crc: u16::from_le_bytes([bytes[n - 2], bytes[n - 1]]),
        })
    }

    fn body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 4);
        out.push(self.address);
        out.push(self.function);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn expected_crc(&self) -> u16 {
        crc16_modbus(&self.body())
    }

    pub fn verify(&self) -> Result<(), CodecError> {
        let expected = self.expected_crc();
        if expected != self.crc {
            return Err(CodecError::Integrity {
                expected,
                found: self.crc,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body();
        out.extend_from_slice(&self.crc.to_le_bytes());
        out
    }
}
