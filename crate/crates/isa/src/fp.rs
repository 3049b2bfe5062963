//! Bit-exact floating point semantics shared by the interpreter and any
//! reference evaluator that must agree with it bitwise.
//!
//! Every operation takes and returns raw bit patterns. binary32 arithmetic is
//! round-to-nearest-even without flush-to-zero; every NaN result is
//! canonicalized to [`F32_QNAN`] (or [`F16_QNAN`] per binary16 lane) so that
//! NaN payloads never depend on the host CPU.

use std::sync::LazyLock;

/// Canonical binary32 quiet NaN.
pub const F32_QNAN: u32 = 0x7fc0_0000;
/// Canonical binary16 quiet NaN.
pub const F16_QNAN: u16 = 0x7e00;

#[inline]
fn canon(x: f32) -> u32 {
    if x.is_nan() {
        F32_QNAN
    } else {
        x.to_bits()
    }
}

#[inline]
fn f(bits: u32) -> f32 {
    f32::from_bits(bits)
}

#[inline]
pub fn fadd(a: u32, b: u32) -> u32 {
    canon(f(a) + f(b))
}

#[inline]
pub fn fmul(a: u32, b: u32) -> u32 {
    canon(f(a) * f(b))
}

/// Fused `a * b + c` with a single rounding.
#[inline]
pub fn ffma(a: u32, b: u32, c: u32) -> u32 {
    canon(f(a).mul_add(f(b), f(c)))
}

#[inline]
pub fn rcp(a: u32) -> u32 {
    canon(1.0 / f(a))
}

/// `2^a`, evaluated in binary64 by a portable libm and rounded to binary32.
#[inline]
pub fn ex2(a: u32) -> u32 {
    canon(libm::exp2(f(a) as f64) as f32)
}

/// `log2(a)`, evaluated in binary64 by a portable libm and rounded to binary32.
#[inline]
pub fn lg2(a: u32) -> u32 {
    canon(libm::log2(f(a) as f64) as f32)
}

/// `1/sqrt(a)`, evaluated in binary64 and rounded once to binary32.
#[inline]
pub fn rsq(a: u32) -> u32 {
    canon((1.0 / (f(a) as f64).sqrt()) as f32)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Tie {
    Even,
    Away,
    Toward,
}

/// Exact binary16 to binary32 widening; NaNs become [`F32_QNAN`].
#[inline]
pub fn f16_to_f32(h: u16) -> u32 {
    let sign = ((h >> 15) as u32) << 31;
    let exp = ((h >> 10) & 0x1f) as u32;
    let mant = (h & 0x3ff) as u32;
    match exp {
        0 if mant == 0 => sign,
        0 => {
            // subnormal: mant * 2^-24, always normal in binary32
            let lz = mant.leading_zeros() - 22; // zeros within the 10-bit field
            let m = (mant << (lz + 1)) & 0x3ff;
            let e = 127 - 15 - lz;
            sign | (e << 23) | (m << 13)
        }
        0x1f if mant == 0 => sign | 0x7f80_0000,
        0x1f => F32_QNAN,
        _ => sign | ((exp + 127 - 15) << 23) | (mant << 13),
    }
}

/// Round a binary64 value to binary16, nearest-even.
pub fn f64_to_f16(x: f64) -> u16 {
    round_f64_to_f16(x, Tie::Even)
}

/// Round a binary32 value to binary16, nearest-even. Exact widening to
/// binary64 first, so this is a single rounding.
#[inline]
pub fn f32_to_f16(bits: u32) -> u16 {
    f64_to_f16(f(bits) as f64)
}

fn round_f64_to_f16(x: f64, tie: Tie) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 63) as u16) << 15;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0x7ff {
        return if frac != 0 { F16_QNAN } else { sign | 0x7c00 };
    }
    if exp == 0 {
        // zero or binary64 subnormal, both far below half the smallest binary16
        return sign;
    }
    let e = exp - 1023;
    let m = frac | (1u64 << 52);
    let round = |q: u64, rem: u64, half: u64| -> u64 {
        let up = if rem > half {
            true
        } else if rem < half {
            false
        } else {
            match tie {
                Tie::Even => q & 1 == 1,
                Tie::Away => true,
                Tie::Toward => false,
            }
        };
        q + up as u64
    };
    if e >= -14 {
        let mut biased = e + 15;
        if biased >= 31 {
            return sign | 0x7c00;
        }
        let q = m >> 42;
        let rem = m & ((1u64 << 42) - 1);
        let mut q = round(q, rem, 1u64 << 41);
        if q == 1 << 11 {
            q >>= 1;
            biased += 1;
            if biased >= 31 {
                return sign | 0x7c00;
            }
        }
        sign | ((biased as u16) << 10) | (q as u16 & 0x3ff)
    } else {
        // subnormal result in units of 2^-24
        let s = (28 - e) as u32;
        if s > 53 {
            return sign;
        }
        let q = m >> s;
        let rem = m & ((1u64 << s) - 1);
        let q = round(q, rem, 1u64 << (s - 1));
        // q == 0x400 lands exactly on the smallest normal encoding
        sign | q as u16
    }
}

#[inline]
fn lanes(w: u32) -> (u16, u16) {
    (w as u16, (w >> 16) as u16)
}

#[inline]
fn pack(lo: u16, hi: u16) -> u32 {
    lo as u32 | (hi as u32) << 16
}

static WIDEN: LazyLock<Box<[u32]>> = LazyLock::new(|| (0..=u16::MAX).map(f16_to_f32).collect());

#[inline]
fn h(x: u16) -> f32 {
    f(WIDEN[x as usize])
}

// binary32 carries 24 >= 2*11 + 2 significand bits, so evaluating a single
// binary16 add or multiply in binary32 and rounding again is correctly
// rounded.
fn hadd(a: u16, b: u16) -> u16 {
    f32_to_f16(canon(h(a) + h(b)))
}

fn hmul(a: u16, b: u16) -> u16 {
    f32_to_f16(canon(h(a) * h(b)))
}

/// Correctly rounded binary16 fused multiply-add.
///
/// The product of two binary16 values is exact in binary64. The sum is split
/// with TwoSum into a rounded head and an exact tail; the tail only matters
/// when the head sits exactly on a binary16 rounding boundary, where it
/// breaks the tie.
fn hfma(a: u16, b: u16, c: u16) -> u16 {
    let p = h(a) as f64 * h(b) as f64;
    let c = h(c) as f64;
    let s = p + c;
    if !s.is_finite() {
        return if s.is_nan() { F16_QNAN } else { round_f64_to_f16(s, Tie::Even) };
    }
    let bp = s - c;
    let bc = s - bp;
    let err = (p - bp) + (c - bc);
    let tie = if err == 0.0 {
        Tie::Even
    } else if (err > 0.0) == (s > 0.0) {
        Tie::Away
    } else {
        Tie::Toward
    };
    round_f64_to_f16(s, tie)
}

#[inline]
pub fn hadd2(a: u32, b: u32) -> u32 {
    let (al, ah) = lanes(a);
    let (bl, bh) = lanes(b);
    pack(hadd(al, bl), hadd(ah, bh))
}

#[inline]
pub fn hmul2(a: u32, b: u32) -> u32 {
    let (al, ah) = lanes(a);
    let (bl, bh) = lanes(b);
    pack(hmul(al, bl), hmul(ah, bh))
}

#[inline]
pub fn hfma2(a: u32, b: u32, c: u32) -> u32 {
    let (al, ah) = lanes(a);
    let (bl, bh) = lanes(b);
    let (cl, ch) = lanes(c);
    pack(hfma(al, bl, cl), hfma(ah, bh, ch))
}

/// `lo(a)*lo(b) + hi(a)*hi(b) + c` with both products and both adds in
/// binary32, evaluated left to right.
#[inline]
pub fn hmma_step(a: u32, b: u32, c: u32) -> u32 {
    let (al, ah) = lanes(a);
    let (bl, bh) = lanes(b);
    let plo = h(al) * h(bl);
    let phi = h(ah) * h(bh);
    let s = f(canon(plo + phi));
    canon(s + f(c))
}

/// Packs two binary32 values into binary16 halves, `a` low and `b` high.
#[inline]
pub fn f2h2(a: u32, b: u32) -> u32 {
    pack(f32_to_f16(a), f32_to_f16(b))
}

#[inline]
pub fn h2f_lo(a: u32) -> u32 {
    f16_to_f32(a as u16)
}

#[inline]
pub fn h2f_hi(a: u32) -> u32 {
    f16_to_f32((a >> 16) as u16)
}
