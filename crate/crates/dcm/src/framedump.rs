//! Decode a single wire frame given as hex.
//!
//! Modbus-RTU frames are plain hex (`010400000...`, whitespace allowed).
//! CAN frames use the candump form `ID#DATA`, e.g. `355#3C006400`.

use dcm_core::codec::{
    decode_bms_frame, decode_pzem_registers, BmsDecode, BmsFrame, BmsUpdate, CodecError,
    ModbusFrame, PzemRegisters, READ_INPUT_REGISTERS,
};
use dcm_core::ElectricalReading;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameDumpError {
    #[error("invalid hex: {0}")]
    Hex(#[from] hex::FromHexError),
    #[error("invalid CAN id `{0}`: expected up to three hex digits")]
    CanId(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "frame", rename_all = "snake_case")]
pub enum Dump {
    PzemRequest {
        address: u8,
        start_register: u16,
        register_count: u16,
        crc: String,
    },
    PzemResponse {
        address: u8,
        registers: PzemRegisters,
        reading: ElectricalReading,
        power_alarm: bool,
        crc: String,
    },
    ModbusException {
        address: u8,
        function: u8,
        code: u8,
    },
    Bms {
        id: String,
        update: BmsUpdate,
        alarms: Vec<&'static str>,
    },
    CanIgnored {
        id: String,
    },
}

pub fn dump(input: &str) -> Result<Dump, FrameDumpError> {
    let compact: String = input.chars().filter(|c| !c.is_whitespace()).collect();
    match compact.split_once('#') {
        Some((id, data)) => dump_can(id, data),
        None => dump_modbus(&hex::decode(&compact)?),
    }
}

fn dump_can(id: &str, data: &str) -> Result<Dump, FrameDumpError> {
    let bad_id = || FrameDumpError::CanId(id.to_string());
    if id.is_empty() || id.len() > 3 {
        return Err(bad_id());
    }
    let id = u16::from_str_radix(id, 16).map_err(|_| bad_id())?;
    let frame = BmsFrame::new(id, &hex::decode(data)?)?;
    let id = format!("{id:03X}");
    Ok(match decode_bms_frame(&frame)? {
        BmsDecode::Update(update) => Dump::Bms {
            id,
            alarms: update
                .alarms
                .map(|a| a.names().collect())
                .unwrap_or_default(),
            update,
        },
        BmsDecode::Ignored(_) => Dump::CanIgnored { id },
    })
}

fn dump_modbus(bytes: &[u8]) -> Result<Dump, FrameDumpError> {
    let frame = ModbusFrame::parse(bytes)?;
    frame.verify()?;
    let crc = format!("{:04X}", frame.crc);
    if frame.function == READ_INPUT_REGISTERS && frame.payload.len() == 4 {
        let start = u16::from_be_bytes([frame.payload[0], frame.payload[1]]);
        // Responses carry an odd-length body (byte count + words), so four
        // bytes can only be a request.
        return Ok(Dump::PzemRequest {
            address: frame.address,
            start_register: start,
            register_count: u16::from_be_bytes([frame.payload[2], frame.payload[3]]),
            crc,
        });
    }
    match decode_pzem_registers(&frame) {
        Ok(registers) => Ok(Dump::PzemResponse {
            address: frame.address,
            reading: registers.to_reading(0.0),
            power_alarm: registers.alarm_status == 0xFFFF,
            registers,
            crc,
        }),
        Err(CodecError::Exception { function, code }) => Ok(Dump::ModbusException {
            address: frame.address,
            function,
            code,
        }),
        Err(e) => Err(e.into()),
    }
}
