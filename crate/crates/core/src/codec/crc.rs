/// Reflected 0x8005 polynomial.
const POLY: u16 = 0xA001;

const TABLE: [u16; 256] = build_table();

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ POLY
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// CRC-16/MODBUS: init 0xFFFF, reflected, no final xor. Sent low byte first.
pub fn crc16_modbus(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |crc, &b| {
        (crc >> 8) ^ TABLE[((crc ^ b as u16) & 0xFF) as usize]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-serial shift register, written out long-hand.
    fn crc_bitwise(data: &[u8]) -> u16 {
        let mut reg: u16 = 0xFFFF;
        for &byte in data {
            reg ^= byte as u16;
            for _ in 0..8 {
                let lsb = reg & 1;
                reg >>= 1;
                if lsb == 1 {
                    reg ^= 0xA001;
                }
            }
        }
        reg
    }

    #[test]
    fn golden_read_request() {
        let data = [0x01, 0x04, 0x00, 0x00, 0x00, 0x0A];
        assert_eq!(crc_bitwise(&data), 0x0D70);
        assert_eq!(crc16_modbus(&data), 0x0D70);
    }

    #[test]
    fn catalogue_check_value() {
        // CRC-16/MODBUS check value over ASCII "123456789".
        assert_eq!(crc16_modbus(b"123456789"), 0x4B37);
    }

    #[test]
    fn deterministic() {
        let data = [0xF7, 0x04, 0x00, 0x00, 0x00, 0x0A];
        assert_eq!(crc16_modbus(&data), crc16_modbus(&data));
        assert_eq!(crc16_modbus(&data), 0x9B64);
    }

    #[test]
    fn every_single_bit_flip_changes_crc() {
        let data = [0x01u8, 0x04, 0x00, 0x00, 0x00, 0x0A];
        let good = crc16_modbus(&data);
        for byte in 0..data.len() {
            for bit in 0..8 {
                let mut d = data;
                d[byte] ^= 1 << bit;
                assert_ne!(crc16_modbus(&d), good, "flip byte {byte} bit {bit}");
            }
        }
    }

    proptest! {
        #[test]
        fn table_matches_shift_register(data in proptest::collection::vec(any::<u8>(), 1..64)) {
            prop_assert_eq!(crc16_modbus(&data), crc_bitwise(&data));
        }
    }
}
