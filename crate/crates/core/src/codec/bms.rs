//! Pylontech-style BMS frames on a standard 11-bit CAN bus.
//!
//! Three frame ids are understood, all little-endian:
//!
//! * `0x355` (4 bytes): SoC `u16` %, SoH `u16` %.
//! * `0x356` (6 bytes): pack voltage `i16` 0.01 V, pack current `i16` 0.1 A
//!   (negative while charging), temperature `i16` 0.1 °C.
//! * `0x359` (7 bytes): protection flags in bytes 0-1, warning flags in
//!   bytes 2-3 (not decoded), module count in byte 4, `"PN"` in bytes 5-6.
//!
//! Protection bits: byte 0 bit 1 over-voltage, bit 2 under-voltage, bit 3
//! over-temperature, bit 4 under-temperature, bit 7 discharge over-current;
//! byte 1 bit 0 charge over-current, bit 1 short circuit.
//!
//! Any other id decodes to [`BmsDecode::Ignored`].

use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::battery::Alarms;

pub const BMS_ID_SOC: u16 = 0x355;
pub const BMS_ID_PACK: u16 = 0x356;
pub const BMS_ID_PROTECTION: u16 = 0x359;

const SOC_LEN: usize = 4;
const PACK_LEN: usize = 6;
const PROTECTION_LEN: usize = 7;

const B0_OVER_VOLTAGE: u8 = 1 << 1;
const B0_UNDER_VOLTAGE: u8 = 1 << 2;
const B0_OVER_TEMP: u8 = 1 << 3;
const B0_UNDER_TEMP: u8 = 1 << 4;
const B0_DISCHARGE_OVER_CURRENT: u8 = 1 << 7;
const B1_CHARGE_OVER_CURRENT: u8 = 1 << 0;
const B1_SHORT_CIRCUIT: u8 = 1 << 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BmsFrame {
    pub id: u16,
    data: [u8; 8],
    len: u8,
}

impl BmsFrame {
    pub fn new(id: u16, payload: &[u8]) -> Result<Self, CodecError> {
        if payload.len() > 8 {
            return Err(CodecError::CanOverflow(payload.len()));
        }
        let mut data = [0u8; 8];
        data[..payload.len()].copy_from_slice(payload);
        Ok(BmsFrame {
            id,
            data,
            len: payload.len() as u8,
        })
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..self.len as usize]
    }

    pub fn is_standard_id(&self) -> bool {
        self.id <= 0x7FF
    }
}

/// Fields carried by one frame; the rest stay `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BmsUpdate {
    pub soc: Option<u16>,
    pub soh: Option<u16>,
    pub pack_voltage: Option<f64>,
    pub pack_current: Option<f64>,
    pub temperature: Option<f64>,
    pub alarms: Option<Alarms>,
}

impl BmsUpdate {
    /// Overlay the fields present in `other`.
    pub fn merge(&mut self, other: &BmsUpdate) {
        self.soc = other.soc.or(self.soc);
        self.soh = other.soh.or(self.soh);
        self.pack_voltage = other.pack_voltage.or(self.pack_voltage);
        self.pack_current = other.pack_current.or(self.pack_current);
        self.temperature = other.temperature.or(self.temperature);
        self.alarms = other.alarms.or(self.alarms);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BmsDecode {
    Update(BmsUpdate),
    /// Frame id outside the layout table.
    Ignored(u16),
}

fn expect_len(frame: &BmsFrame, expected: usize) -> Result<&[u8], CodecError> {
    let p = frame.payload();
    if p.len() != expected {
        return Err(CodecError::PayloadLength {
            id: frame.id,
            expected,
            actual: p.len(),
        });
    }
    Ok(p)
}

fn percent(field: &'static str, raw: u16) -> Result<u16, CodecError> {
    if raw > 100 {
        return Err(CodecError::OutOfRange {
            field,
            value: raw as u32,
        });
    }
    Ok(raw)
}

pub fn decode_bms_frame(frame: &BmsFrame) -> Result<BmsDecode, CodecError> {
    let le16 = |p: &[u8], i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
    let mut u = BmsUpdate::default();
    match frame.id {
        BMS_ID_SOC => {
            let p = expect_len(frame, SOC_LEN)?;
            u.soc = Some(percent("soc", le16(p, 0))?);
            u.soh = Some(percent("soh", le16(p, 2))?);
        }
        BMS_ID_PACK => {
            let p = expect_len(frame, PACK_LEN)?;
            u.pack_voltage = Some(le16(p, 0) as i16 as f64 / 100.0);
            u.pack_current = Some(le16(p, 2) as i16 as f64 / 10.0);
            u.temperature = Some(le16(p, 4) as i16 as f64 / 10.0);
        }
        BMS_ID_PROTECTION => {
            let p = expect_len(frame, PROTECTION_LEN)?;
            u.alarms = Some(alarms_from_protection(p[0], p[1]));
        }
        other => return Ok(BmsDecode::Ignored(other)),
    }
    Ok(BmsDecode::Update(u))
}

fn alarms_from_protection(b0: u8, b1: u8) -> Alarms {
    let mut a = Alarms::empty();
    a.set(Alarms::OVER_VOLTAGE, b0 & B0_OVER_VOLTAGE != 0);
    a.set(Alarms::UNDER_VOLTAGE, b0 & B0_UNDER_VOLTAGE != 0);
    a.set(Alarms::THERMAL, b0 & (B0_OVER_TEMP | B0_UNDER_TEMP) != 0);
    a.set(
        Alarms::OVER_CURRENT,
        b0 & B0_DISCHARGE_OVER_CURRENT != 0 || b1 & B1_CHARGE_OVER_CURRENT != 0,
    );
    a.set(Alarms::SHORT_CIRCUIT, b1 & B1_SHORT_CIRCUIT != 0);
    a
}

/// Register-level image of the three frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct BmsRegisters {
    pub soc: u16,
    pub soh: u16,
    pub voltage_cv: i16,
    pub current_da: i16,
    pub temperature_dc: i16,
    pub alarms: Alarms,
}

fn round_i16(v: f64) -> i16 {
    let r = libm::round(v);
    if r.is_nan() {
        0
    } else {
        r.clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }
}

impl BmsRegisters {
    pub fn from_state(b: &crate::battery::BatteryState) -> Self {
        BmsRegisters {
            soc: libm::round(b.soc.clamp(0.0, 100.0)) as u16,
            soh: libm::round(b.soh.clamp(0.0, 100.0)) as u16,
            voltage_cv: round_i16(b.pack_voltage * 100.0),
            current_da: round_i16(b.pack_current * 10.0),
            temperature_dc: round_i16(b.temperature * 10.0),
            alarms: b.alarms,
        }
    }

    pub fn soc_frame(&self) -> BmsFrame {
        let mut p = [0u8; SOC_LEN];
        p[..2].copy_from_slice(&self.soc.to_le_bytes());
        p[2..].copy_from_slice(&self.soh.to_le_bytes());
        BmsFrame::new(BMS_ID_SOC, &p).expect("fits in 8 bytes")
    }

    pub fn pack_frame(&self) -> BmsFrame {
        let mut p = [0u8; PACK_LEN];
        p[..2].copy_from_slice(&self.voltage_cv.to_le_bytes());
        p[2..4].copy_from_slice(&self.current_da.to_le_bytes());
        p[4..].copy_from_slice(&self.temperature_dc.to_le_bytes());
        BmsFrame::new(BMS_ID_PACK, &p).expect("fits in 8 bytes")
    }

    pub fn protection_frame(&self) -> BmsFrame {
        let a = self.alarms;
        let mut b0 = 0u8;
        let mut b1 = 0u8;
        if a.contains(Alarms::OVER_VOLTAGE) {
            b0 |= B0_OVER_VOLTAGE;
        }
        if a.contains(Alarms::UNDER_VOLTAGE) {
            b0 |= B0_UNDER_VOLTAGE;
        }
        if a.contains(Alarms::THERMAL) {
            b0 |= B0_OVER_TEMP;
        }
        if a.contains(Alarms::OVER_CURRENT) {
            b0 |= B0_DISCHARGE_OVER_CURRENT;
        }
        if a.contains(Alarms::SHORT_CIRCUIT) {
            b1 |= B1_SHORT_CIRCUIT;
        }
        BmsFrame::new(BMS_ID_PROTECTION, &[b0, b1, 0, 0, 1, b'P', b'N']).expect("fits in 8 bytes")
    }

    pub fn frames(&self) -> [BmsFrame; 3] {
        [self.soc_frame(), self.pack_frame(), self.protection_frame()]
    }
}

/// Merges partial updates into the latest known pack state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BmsTracker {
    pub state: BmsUpdate,
    /// Time the SoC frame was last received.
    pub soc_seen_at: Option<f64>,
    pub last_frame_at: Option<f64>,
}

impl BmsTracker {
    /// Feed one frame. Returns `Ok(false)` for ignored ids, which leave the
    /// tracker untouched.
    pub fn ingest(&mut self, frame: &BmsFrame, now: f64) -> Result<bool, CodecError> {
        match decode_bms_frame(frame)? {
            BmsDecode::Ignored(_) => Ok(false),
            BmsDecode::Update(u) => {
                if u.soc.is_some() {
                    self.soc_seen_at = Some(now);
                }
                self.state.merge(&u);
                self.last_frame_at = Some(now);
                Ok(true)
            }
        }
    }
}
