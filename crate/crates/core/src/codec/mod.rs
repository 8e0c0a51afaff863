//! Wire codecs for the sensing layer: PZEM-016 energy meters over
//! Modbus-RTU and Pylontech-style BMS frames over CAN.

mod bms;
mod crc;
mod modbus;
mod pzem;

use thiserror::Error;

pub use bms::{
    decode_bms_frame, BmsDecode, BmsFrame, BmsRegisters, BmsTracker, BmsUpdate, BMS_ID_PACK,
    BMS_ID_PROTECTION, BMS_ID_SOC,
};
pub use crc::crc16_modbus;
pub use modbus::{ModbusFrame, MIN_FRAME_LEN};
pub use pzem::{
    decode_pzem_registers, decode_pzem_response, encode_pzem_read_request, PzemRegisters,
    PZEM_REGISTER_COUNT, READ_INPUT_REGISTERS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("frame too short: need at least {expected} bytes, got {actual}")]
    Framing { expected: usize, actual: usize },
    #[error("CRC mismatch: frame carries {found:#06x}, computed {expected:#06x}")]
    Integrity { expected: u16, found: u16 },
    #[error("unexpected function code {0:#04x}")]
    Protocol(u8),
    #[error("device returned Modbus exception {code:#04x} for function {function:#04x}")]
    Exception { function: u8, code: u8 },
    #[error("slave address {0} outside 1..=247")]
    Address(u8),
    #[error("{field} value {value} out of range")]
    OutOfRange { field: &'static str, value: u32 },
    #[error("CAN id {id:#05x}: payload length {actual}, layout requires {expected}")]
    PayloadLength {
        id: u16,
        expected: usize,
        actual: usize,
    },
    #[error("CAN payload of {0} bytes exceeds 8")]
    CanOverflow(usize),
}
