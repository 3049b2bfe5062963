//! 32-bit machine words and their interpretations.

use std::fmt;

/// A raw 32-bit register or memory word.
///
/// Bit 0 is the least significant bit and bit 31 the most significant. When
/// read as binary32, bit 31 is the sign, bits 23..=30 the exponent and bits
/// 0..=22 the fraction, so bit 30 is the top exponent bit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Word32(pub u32);

impl Word32 {
    pub fn from_f32(x: f32) -> Self {
        Word32(x.to_bits())
    }

    pub fn from_i32(x: i32) -> Self {
        Word32(x as u32)
    }

    /// Packs two binary16 patterns, `lo` in bits 0..=15 and `hi` in bits 16..=31.
    pub fn from_halves(lo: u16, hi: u16) -> Self {
        Word32(lo as u32 | (hi as u32) << 16)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn as_f32(self) -> f32 {
        f32::from_bits(self.0)
    }

    pub fn as_i32(self) -> i32 {
        self.0 as i32
    }

    pub fn lo16(self) -> u16 {
        self.0 as u16
    }

    pub fn hi16(self) -> u16 {
        (self.0 >> 16) as u16
    }

    /// Returns the word with bit `bit` inverted. `bit` is taken modulo 32.
    pub fn flip(self, bit: u8) -> Self {
        Word32(self.0 ^ (1u32 << (bit & 31)))
    }
}

/// Inverts bit `b` (0 = LSB, 31 = sign) of `w`.
///
/// # Panics
///
/// Panics if `b > 31`.
pub fn flip_bit(w: Word32, b: u8) -> Word32 {
    assert!(b <= 31, "bit index {b} out of range");
    w.flip(b)
}

impl fmt::Debug for Word32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word32({:#010x})", self.0)
    }
}

impl fmt::Display for Word32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

impl From<u32> for Word32 {
    fn from(v: u32) -> Self {
        Word32(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exponent_msb_flip_of_one_fifth() {
        let before = Word32(0x3e4c_cccd);
        let after = flip_bit(before, 30);
        assert_eq!(after, Word32(0x7e4c_cccd));
        assert_eq!(before.as_f32(), 0.2);
        // strict binary32 decoding, ~6.81e37
        let v = after.as_f32();
        assert!(v > 6.8e37 && v < 6.82e37, "{v}");
    }

    #[test]
    fn lsb_of_zero() {
        assert_eq!(flip_bit(Word32(0), 0), Word32(1));
    }

    #[test]
    fn flip_is_an_involution_on_deadbeef() {
        let w = Word32(0xDEAD_BEEF);
        assert_eq!(flip_bit(flip_bit(w, 17), 17), w);
    }

    #[test]
    #[should_panic]
    fn bit_32_is_rejected() {
        flip_bit(Word32(0), 32);
    }

    #[test]
    fn halves() {
        let w = Word32::from_halves(0x3c00, 0xc000);
        assert_eq!(w.lo16(), 0x3c00);
        assert_eq!(w.hi16(), 0xc000);
        assert_eq!(w.bits(), 0xc000_3c00);
    }

    proptest! {
        #[test]
        fn flip_changes_exactly_one_bit(w in any::<u32>(), b in 0u8..32) {
            let f = flip_bit(Word32(w), b);
            prop_assert_eq!((f.0 ^ w).count_ones(), 1);
            prop_assert_eq!(f.0 ^ w, 1u32 << b);
            prop_assert_eq!(flip_bit(f, b), Word32(w));
        }

        #[test]
        fn fp32_view_matches_ieee_fields(w in any::<u32>()) {
            let x = Word32(w).as_f32();
            let sign = w >> 31;
            let exp = (w >> 23) & 0xff;
            let frac = w & 0x7f_ffff;
            if exp == 0xff {
                prop_assert!(x.is_nan() || x.is_infinite());
            } else {
                let mag = if exp == 0 {
                    frac as f64 * 2f64.powi(-149)
                } else {
                    (1.0 + frac as f64 / 8_388_608.0) * 2f64.powi(exp as i32 - 127)
                };
                let v = if sign == 1 { -mag } else { mag };
                prop_assert_eq!(x as f64, v);
            }
        }
    }
}
