//! PZEM-016 measurement block.
//!
//! Ten input registers starting at 0x0000, read with function 0x04. Each
//! register is big-endian on the wire; 32-bit quantities occupy two
//! registers, low word first.
//!
//! | reg | quantity     | unit    |
//! |-----|--------------|---------|
//! | 0   | voltage      | 0.1 V   |
//! | 1-2 | current      | 0.001 A |
//! | 3-4 | active power | 0.1 W   |
//! | 5-6 | energy       | 1 Wh    |
//! | 7   | frequency    | 0.1 Hz  |
//! | 8   | power factor | 0.01    |
//! | 9   | alarm status | 0xFFFF = power alarm |

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CodecError, ModbusFrame};
use crate::reading::ElectricalReading;

pub const READ_INPUT_REGISTERS: u8 = 0x04;
pub const PZEM_REGISTER_COUNT: u16 = 10;
const RESPONSE_BYTE_COUNT: u8 = (PZEM_REGISTER_COUNT * 2) as u8;
const EXCEPTION_FLAG: u8 = 0x80;

/// Build the request for the full measurement block.
pub fn encode_pzem_read_request(address: u8) -> Result<ModbusFrame, CodecError> {
    if !(1..=247).contains(&address) {
        return Err(CodecError::Address(address));
    }
    let mut payload = Vec::with_capacity(4);
    payload.extend_from_slice(&0u16.to_be_bytes());
    payload.extend_from_slice(&PZEM_REGISTER_COUNT.to_be_bytes());
    Ok(ModbusFrame::new(address, READ_INPUT_REGISTERS, payload))
}

/// Raw register values in device units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct PzemRegisters {
    pub voltage_dv: u16,
    pub current_ma: u32,
    pub power_dw: u32,
    pub energy_wh: u32,
    pub frequency_dhz: u16,
    pub power_factor_pct: u16,
    pub alarm_status: u16,
}

fn quantize(value: f64, scale: f64, max: u64) -> u64 {
    let v = libm::round(value * scale);
    if !(v > 0.0) {
        // NaN and negatives saturate to zero.
        0
    } else if v >= max as f64 {
        max
    } else {
        v as u64
    }
}

impl PzemRegisters {
    /// Quantize a physical reading to register resolution, saturating at the
    /// register bounds.
    pub fn from_reading(r: &ElectricalReading) -> Self {
        PzemRegisters {
            voltage_dv: quantize(r.voltage, 10.0, u16::MAX as u64) as u16,
            current_ma: quantize(r.current, 1000.0, u32::MAX as u64) as u32,
            power_dw: quantize(r.active_power, 10.0, u32::MAX as u64) as u32,
            energy_wh: quantize(libm::floor(r.energy), 1.0, u32::MAX as u64) as u32,
            frequency_dhz: quantize(r.frequency, 10.0, u16::MAX as u64) as u16,
            power_factor_pct: quantize(r.power_factor, 100.0, 100) as u16,
            alarm_status: 0,
        }
    }

    pub fn to_reading(&self, timestamp: f64) -> ElectricalReading {
        ElectricalReading {
            voltage: self.voltage_dv as f64 / 10.0,
            current: self.current_ma as f64 / 1000.0,
            active_power: self.power_dw as f64 / 10.0,
            power_factor: self.power_factor_pct as f64 / 100.0,
            frequency: self.frequency_dhz as f64 / 10.0,
            energy: self.energy_wh as f64,
            timestamp,
        }
    }

    pub fn to_words(&self) -> [u16; 10] {
        let lo = |v: u32| (v & 0xFFFF) as u16;
        let hi = |v: u32| (v >> 16) as u16;
        [
            self.voltage_dv,
            lo(self.current_ma),
            hi(self.current_ma),
            lo(self.power_dw),
            hi(self.power_dw),
            lo(self.energy_wh),
            hi(self.energy_wh),
            self.frequency_dhz,
            self.power_factor_pct,
            self.alarm_status,
        ]
    }

    pub fn from_words(w: &[u16; 10]) -> Self {
        let join = |lo: u16, hi: u16| (hi as u32) << 16 | lo as u32;
        PzemRegisters {
            voltage_dv: w[0],
            current_ma: join(w[1], w[2]),
            power_dw: join(w[3], w[4]),
            energy_wh: join(w[5], w[6]),
            frequency_dhz: w[7],
            power_factor_pct: w[8],
            alarm_status: w[9],
        }
    }

    /// The meter's response frame carrying these registers.
    pub fn encode_response(&self, address: u8) -> ModbusFrame {
        let mut payload = Vec::with_capacity(1 + RESPONSE_BYTE_COUNT as usize);
        payload.push(RESPONSE_BYTE_COUNT);
        for w in self.to_words() {
            payload.extend_from_slice(&w.to_be_bytes());
        }
        ModbusFrame::new(address, READ_INPUT_REGISTERS, payload)
    }
}

/// Validate a response frame and extract its registers.
pub fn decode_pzem_registers(frame: &ModbusFrame) -> Result<PzemRegisters, CodecError> {
    frame.verify()?;
    if frame.function == READ_INPUT_REGISTERS | EXCEPTION_FLAG {
        return Err(CodecError::Exception {
            function: READ_INPUT_REGISTERS,
            code: frame.payload.first().copied().unwrap_or(0),
        });
    }
    if frame.function != READ_INPUT_REGISTERS {
        return Err(CodecError::Protocol(frame.function));
    }
    let expected = 1 + RESPONSE_BYTE_COUNT as usize;
    if frame.payload.len() != expected || frame.payload[0] != RESPONSE_BYTE_COUNT {
        return Err(CodecError::Framing {
            expected,
            actual: frame.payload.len(),
        });
    }
    let mut words = [0u16; 10];
    for (i, w) in words.iter_mut().enumerate() {
        *w = u16::from_be_bytes([frame.payload[1 + 2 * i], frame.payload[2 + 2 * i]]);
    }
    let regs = PzemRegisters::from_words(&words);
    if regs.power_factor_pct > 100 {
        return Err(CodecError::OutOfRange {
            field: "power_factor",
            value: regs.power_factor_pct as u32,
        });
    }
    Ok(regs)
}

/// Decode a meter response into a reading stamped with `timestamp`.
pub fn decode_pzem_response(
    frame: &ModbusFrame,
    timestamp: f64,
) -> Result<ElectricalReading, CodecError> {
    decode_pzem_registers(frame).map(|r| r.to_reading(timestamp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn request_layout() {
        let f = encode_pzem_read_request(1).unwrap();
        assert_eq!(
            f.to_bytes(),
            vec![0x01, 0x04, 0x00, 0x00, 0x00, 0x0A, 0x70, 0x0D]
        );
        assert_eq!(encode_pzem_read_request(0), Err(CodecError::Address(0)));
        assert_eq!(encode_pzem_read_request(248), Err(CodecError::Address(248)));
        let last = encode_pzem_read_request(247).unwrap().to_bytes();
        assert_eq!(last.len(), 8);
        assert_eq!(&last[..6], &[0xF7, 0x04, 0x00, 0x00, 0x00, 0x0A]);
    }

    fn hand_packed() -> Vec<u8> {
        let body = [
            0x01, 0x04, 0x14, // address, function, byte count
            0x08, 0xFC, // 2300 -> 230.0 V
            0x03, 0xE8, 0x00, 0x00, // 1000 mA, low word first
            0x08, 0x89, 0x00, 0x00, // 2185 -> 218.5 W
            0x00, 0x00, 0x00, 0x00, // 0 Wh
            0x01, 0xF4, // 500 -> 50.0 Hz
            0x00, 0x5F, // 95 -> 0.95
            0x00, 0x00, // no alarm
        ];
        let crc = crate::codec::crc16_modbus(&body);
        let mut bytes = body.to_vec();
        bytes.extend_from_slice(&crc.to_le_bytes());
        bytes
    }

    #[test]
    fn decodes_hand_packed_response() {
        let frame = ModbusFrame::parse(&hand_packed()).unwrap();
        let r = decode_pzem_response(&frame, 12.0).unwrap();
        assert_eq!(r.voltage, 230.0);
        assert_eq!(r.current, 1.0);
        assert_eq!(r.active_power, 218.5);
        assert_eq!(r.power_factor, 0.95);
        assert_eq!(r.frequency, 50.0);
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.timestamp, 12.0);
    }

    #[test]
    fn encoder_matches_hand_packing() {
        let regs = PzemRegisters {
            voltage_dv: 2300,
            current_ma: 1000,
            power_dw: 2185,
            energy_wh: 0,
            frequency_dhz: 500,
            power_factor_pct: 95,
            alarm_status: 0,
        };
        assert_eq!(regs.encode_response(1).to_bytes(), hand_packed());
    }

    #[test]
    fn all_zero_registers() {
        let f = PzemRegisters::default().encode_response(1);
        let r = decode_pzem_response(&f, 0.0).unwrap();
        assert_eq!(
            (r.voltage, r.current, r.active_power, r.power_factor),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn corrupted_crc_is_integrity_error() {
        let mut bytes = hand_packed();
        let n = bytes.len();
        bytes[n - 1] ^= 0xFF;
        let frame = ModbusFrame::parse(&bytes).unwrap();
        assert!(matches!(
            decode_pzem_response(&frame, 0.0),
            Err(CodecError::Integrity { .. })
        ));
    }

    #[test]
    fn wrong_function_and_exception() {
        let f = ModbusFrame::new(1, 0x03, vec![0x14; 21]);
        assert_eq!(
            decode_pzem_response(&f, 0.0),
            Err(CodecError::Protocol(0x03))
        );
        let e = ModbusFrame::new(1, 0x84, vec![0x02]);
        assert_eq!(
            decode_pzem_response(&e, 0.0),
            Err(CodecError::Exception {
                function: 0x04,
                code: 0x02
            })
        );
    }

    #[test]
    fn short_payload_is_framing_error() {
        let f = ModbusFrame::new(1, 0x04, vec![0x14, 0, 1, 2]);
        assert!(matches!(
            decode_pzem_response(&f, 0.0),
            Err(CodecError::Framing { .. })
        ));
    }

    #[test]
    fn power_factor_above_one_rejected() {
        let regs = PzemRegisters {
            power_factor_pct: 101,
            ..Default::default()
        };
        assert!(matches!(
            decode_pzem_registers(&regs.encode_response(1)),
            Err(CodecError::OutOfRange {
                field: "power_factor",
                ..
            })
        ));
    }

    #[test]
    fn seven_watt_bulb_reads_seven_watts() {
        let truth = ElectricalReading {
            voltage: 229.87,
            current: 7.0 / (229.87 * 0.96),
            active_power: 7.0,
            power_factor: 0.96,
            frequency: 50.0,
            energy: 0.0,
            timestamp: 0.0,
        };
        let frame = PzemRegisters::from_reading(&truth).encode_response(2);
        let r = decode_pzem_response(&frame, 0.0).unwrap();
        assert!((r.active_power - 7.0).abs() <= 0.1);
    }

    fn any_registers() -> impl Strategy<Value = PzemRegisters> {
        (
            any::<u16>(),
            any::<u32>(),
            any::<u32>(),
            any::<u32>(),
            any::<u16>(),
            0u16..=100,
            any::<u16>(),
        )
            .prop_map(|(v, i, p, e, f, pf, a)| PzemRegisters {
                voltage_dv: v,
                current_ma: i,
                power_dw: p,
                energy_wh: e,
                frequency_dhz: f,
                power_factor_pct: pf,
                alarm_status: a,
            })
    }

    proptest! {
        #[test]
        fn register_round_trip(regs in any_registers()) {
            let decoded = decode_pzem_registers(&regs.encode_response(1)).unwrap();
            prop_assert_eq!(decoded, regs);
            // Physical values map back onto the same registers.
            let mut again = PzemRegisters::from_reading(&decoded.to_reading(0.0));
            again.alarm_status = regs.alarm_status;
            prop_assert_eq!(again, regs);
        }

        #[test]
        fn quantization_error_within_half_step(p in 0.0f64..100_000.0) {
            let r = ElectricalReading { active_power: p, ..Default::default() };
            let q = PzemRegisters::from_reading(&r).to_reading(0.0).active_power;
            prop_assert!((q - p).abs() <= 0.05 + 1e-9);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            if let Ok(f) = ModbusFrame::parse(&bytes) {
                let _ = decode_pzem_response(&f, 0.0);
            }
        }
    }
}
