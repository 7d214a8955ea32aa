//! Bit-level model of the reconfigurable mixed-precision processing element.
//!
//! An FP16 multiply is carried out on the INT8 datapath: each 11-bit
//! significand (hidden one plus 10 stored bits) is split into a 6-bit high
//! chunk and a 5-bit low chunk, and the four cross products are formed on
//! 8x8 unsigned multipliers and recombined with shifts of 0, 5, 5 and 10.
//! Exponents are summed on a 6-bit adder. Products are aligned to the largest
//! exponent before being summed in the reused INT32 accumulator, and only the
//! final result is rounded (nearest-even) back to FP16.
//!
//! Only the normal path is modelled: subnormal inputs flush to zero and
//! infinities or NaNs are rejected when a [`Half`] is constructed.

use std::fmt;

use crate::error::{Error, Result};

pub const EXPONENT_BIAS: i32 = 15;
pub const MANTISSA_BITS: u32 = 10;
/// Fractional bits of an [`AlignedProduct`] significand (10 + 10).
pub const PRODUCT_FRACTION_BITS: i32 = 20;

const HIGH_CHUNK_SHIFT: u32 = 5;
const LOW_CHUNK_MASK: u16 = (1 << HIGH_CHUNK_SHIFT) - 1;
const MAX_EXPONENT: i32 = 15;
const MIN_EXPONENT: i32 = -14;
const MAX_NORMAL_BITS: u16 = 0x7BFF;
/// Exponent carried by a zero product; below any real product exponent.
const ZERO_PRODUCT_EXPONENT: i32 = -2 * EXPONENT_BIAS - 1;
const ACCUMULATOR_BITS: u32 = 31;

/// IEEE binary16 value restricted to normal numbers and signed zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0);
    pub const ONE: Half = Half(0x3C00);
    pub const MAX: Half = Half(MAX_NORMAL_BITS);

    /// Subnormal patterns flush to a zero of the same sign.
    pub fn from_bits(bits: u16) -> Result<Self> {
        let exp = (bits >> MANTISSA_BITS) & 0x1F;
        if exp == 0x1F {
            return Err(Error::domain(format!(
                "0x{bits:04x} is an infinity or NaN"
            )));
        }
        if exp == 0 {
            return Ok(Half(bits & 0x8000));
        }
        Ok(Half(bits))
    }

    /// Round-to-nearest-even conversion. Magnitudes below the smallest normal
    /// flush to zero; values that round past the largest normal are rejected.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::domain(format!("{value} is not finite")));
        }
        let negative = value.is_sign_negative();
        if value == 0.0 {
            return Ok(if negative { Half(0x8000) } else { Half::ZERO });
        }
        let bits = value.abs().to_bits();
        let biased = ((bits >> 52) & 0x7FF) as i32;
        if biased == 0 {
            // f64 subnormal: far below the FP16 normal range.
            return Ok(if negative { Half(0x8000) } else { Half::ZERO });
        }
        let significand = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
        let packed = pack_nearest_even(negative, significand, biased - 1075);
        if packed.saturated {
            return Err(Error::domain(format!("{value} overflows FP16")));
        }
        Ok(packed.value)
    }

    pub fn to_f64(self) -> f64 {
        if self.is_zero() {
            return if self.is_negative() { -0.0 } else { 0.0 };
        }
        let magnitude = self.significand() as f64
            * 2f64.powi(self.exponent() - MANTISSA_BITS as i32);
        if self.is_negative() {
            -magnitude
        } else {
            magnitude
        }
    }

    pub fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }

    #[inline]
    pub fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn is_negative(self) -> bool {
        self.0 & 0x8000 != 0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 & 0x7FFF == 0
    }

    #[inline]
    pub fn biased_exponent(self) -> u8 {
        ((self.0 >> MANTISSA_BITS) & 0x1F) as u8
    }

    /// Unbiased exponent of a nonzero value.
    #[inline]
    pub fn exponent(self) -> i32 {
        self.biased_exponent() as i32 - EXPONENT_BIAS
    }

    #[inline]
    pub fn mantissa(self) -> u16 {
        self.0 & 0x3FF
    }

    /// 11-bit significand including the hidden bit; 0 for zero.
    #[inline]
    pub fn significand(self) -> u16 {
        if self.is_zero() {
            0
        } else {
            self.mantissa() | (1 << MANTISSA_BITS)
        }
    }

}

impl std::ops::Neg for Half {
    type Output = Half;

    fn neg(self) -> Half {
        Half(self.0 ^ 0x8000)
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({} / 0x{:04x})", self.to_f64(), self.0)
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl TryFrom<f64> for Half {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Half::from_f64(value)
    }
}

/// Exact product of two FP16 values before alignment.
///
/// Represents `significand * 2^(exponent - 20)`; the significand carries the
/// sign and its magnitude stays below 2^22.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedProduct {
    pub significand: i32,
    pub exponent: i32,
}

impl AlignedProduct {
    pub fn is_zero(&self) -> bool {
        self.significand == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.significand as f64 * 2f64.powi(self.exponent - PRODUCT_FRACTION_BITS)
    }
}

/// Event counts from the PE model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeCounters {
    pub int8_multiplies: u64,
    pub fp16_multiplies: u64,
    pub accumulator_adds: u64,
}

#[inline]
fn int8_multiply(a: u8, b: u8, counters: &mut PeCounters) -> u16 {
    counters.int8_multiplies += 1;
    a as u16 * b as u16
}

/// Biased exponents summed on a 6-bit adder, then both biases removed.
#[inline]
fn exponent_add(a: u8, b: u8) -> i32 {
    let sum = (a as u32 + b as u32) & 0x3F;
    sum as i32 - 2 * EXPONENT_BIAS
}

pub fn fp16_mul_decomposed(a: Half, b: Half) -> AlignedProduct {
    fp16_mul_decomposed_counted(a, b, &mut PeCounters::default())
}

pub fn fp16_mul_decomposed_counted(a: Half, b: Half, counters: &mut PeCounters) -> AlignedProduct {
    counters.fp16_multiplies += 1;

    let (sa, sb) = (a.significand(), b.significand());
    let (a_hi, a_lo) = ((sa >> HIGH_CHUNK_SHIFT) as u8, (sa & LOW_CHUNK_MASK) as u8);
    let (b_hi, b_lo) = ((sb >> HIGH_CHUNK_SHIFT) as u8, (sb & LOW_CHUNK_MASK) as u8);

    let hh = int8_multiply(a_hi, b_hi, counters) as u32;
    let hl = int8_multiply(a_hi, b_lo, counters) as u32;
    let lh = int8_multiply(a_lo, b_hi, counters) as u32;
    let ll = int8_multiply(a_lo, b_lo, counters) as u32;
    let magnitude =
        (hh << (2 * HIGH_CHUNK_SHIFT)) + ((hl + lh) << HIGH_CHUNK_SHIFT) + ll;

    if magnitude == 0 {
        return AlignedProduct {
            significand: 0,
            exponent: ZERO_PRODUCT_EXPONENT,
        };
    }
    let negative = a.is_negative() ^ b.is_negative();
    let significand = if negative {
        -(magnitude as i32)
    } else {
        magnitude as i32
    };
    AlignedProduct {
        significand,
        exponent: exponent_add(a.biased_exponent(), b.biased_exponent()),
    }
}

/// Result of an aligned accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulated {
    pub value: Half,
    /// Set when the sum exceeded the largest normal and was clamped.
    pub saturated: bool,
}

pub fn align_accumulate(products: &[AlignedProduct]) -> Result<Accumulated> {
    align_accumulate_counted(products, &mut PeCounters::default())
}

/// Sums products in a 32-bit signed accumulator after shifting each
/// significand to the largest exponent (right shifts keep a sticky bit), then
/// rounds once to FP16.
pub fn align_accumulate_counted(
    products: &[AlignedProduct],
    counters: &mut PeCounters,
) -> Result<Accumulated> {
    if products.is_empty() {
        return Err(Error::domain("cannot accumulate an empty sequence"));
    }
    let Some(max_exponent) = products
        .iter()
        .filter(|p| !p.is_zero())
        .map(|p| p.exponent)
        .max()
    else {
        return Ok(Accumulated {
            value: Half::ZERO,
            saturated: false,
        });
    };

    // Headroom: len * 2^(22 + guard) must stay below 2^31.
    let growth = usize::BITS - (products.len() - 1).leading_zeros();
    let guard = 9 - growth as i32;

    let mut acc: i32 = 0;
    for p in products.iter().filter(|p| !p.is_zero()) {
        let magnitude = p.significand.unsigned_abs();
        let shift = max_exponent - p.exponent - guard;
        let aligned = if shift <= 0 {
            magnitude << (-shift) as u32
        } else if shift as u32 > ACCUMULATOR_BITS {
            1
        } else {
            let lost = magnitude & ((1u32 << shift) - 1);
            (magnitude >> shift) | u32::from(lost != 0)
        };
        let term = aligned as i32;
        acc = if p.significand < 0 {
            acc.checked_sub(term)
        } else {
            acc.checked_add(term)
        }
        .expect("accumulator headroom exceeded");
        counters.accumulator_adds += 1;
    }

    if acc == 0 {
        return Ok(Accumulated {
            value: Half::ZERO,
            saturated: false,
        });
    }
    let scale = max_exponent - PRODUCT_FRACTION_BITS - guard;
    Ok(pack_nearest_even(acc < 0, acc.unsigned_abs() as u64, scale))
}

/// FP16 dot product on the PE model.
pub fn dot(a: &[Half], b: &[Half], counters: &mut PeCounters) -> Result<Accumulated> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "dot operands differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let products: Vec<_> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| fp16_mul_decomposed_counted(x, y, counters))
        .collect();
    align_accumulate_counted(&products, counters)
}

/// Packs `magnitude * 2^scale` into FP16 with round-to-nearest-even.
fn pack_nearest_even(negative: bool, magnitude: u64, scale: i32) -> Accumulated {
    debug_assert!(magnitude != 0);
    let sign = if negative { 0x8000u16 } else { 0 };
    let msb = 63 - magnitude.leading_zeros() as i32;
    let mut exponent = msb + scale;
    let shift = msb - MANTISSA_BITS as i32;

    let mut significand = if shift > 0 {
        let kept = magnitude >> shift;
        let rem = magnitude & ((1u64 << shift) - 1);
        let halfway = 1u64 << (shift - 1);
        if rem > halfway || (rem == halfway && kept & 1 == 1) {
            kept + 1
        } else {
            kept
        }
    } else {
        magnitude << (-shift)
    };
    if significand == 1 << (MANTISSA_BITS + 1) {
        significand >>= 1;
        exponent += 1;
    }

    if exponent > MAX_EXPONENT {
        return Accumulated {
            value: Half(sign | MAX_NORMAL_BITS),
            saturated: true,
        };
    }
    if exponent < MIN_EXPONENT {
        return Accumulated {
            value: Half(sign),
            saturated: false,
        };
    }
    let biased = (exponent + EXPONENT_BIAS) as u16;
    Accumulated {
        value: Half(sign | (biased << MANTISSA_BITS) | (significand as u16 & 0x3FF)),
        saturated: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Int8,
    Fp16,
}

/// Shape of the PE array in one of its two configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayMode {
    pub precision: Precision,
    pub rows: usize,
    pub cols: usize,
}

impl ArrayMode {
    /// Multiplies issued per cycle at full occupancy.
    pub fn peak_multiplies_per_cycle(&self) -> usize {
        self.rows * self.cols
    }

    /// Whether a `v x d` input tile occupies the array exactly.
    pub fn fits_tile(&self, v: usize, d: usize) -> bool {
        self.rows == v && self.cols == d
    }
}

/// Four INT8 PEs fuse into one FP16 PE, so the column count drops by four.
pub fn reconfigure(precision: Precision) -> ArrayMode {
    match precision {
        Precision::Int8 => ArrayMode {
            precision,
            rows: 32,
            cols: 32,
        },
        Precision::Fp16 => ArrayMode {
            precision,
            rows: 32,
            cols: 8,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: f64) -> Half {
        Half::from_f64(v).unwrap()
    }

    #[test]
    fn one_times_one() {
        let p = fp16_mul_decomposed(Half::ONE, Half::ONE);
        assert_eq!(p.significand, 1 << 20);
        assert_eq!(p.exponent, 0);
        assert_eq!(p.to_f64(), 1.0);
    }

    #[test]
    fn one_and_a_half_times_two() {
        let p = fp16_mul_decomposed(h(1.5), h(2.0));
        assert_eq!(p.to_f64(), 3.0);
    }

    #[test]
    fn four_int8_multiplies_per_product() {
        let mut c = PeCounters::default();
        fp16_mul_decomposed_counted(h(-3.25), h(0.125), &mut c);
        fp16_mul_decomposed_counted(h(7.0), h(1.0), &mut c);
        assert_eq!(c.fp16_multiplies, 2);
        assert_eq!(c.int8_multiplies, 8);
    }

    #[test]
    fn zero_operand() {
        let p = fp16_mul_decomposed(Half::ZERO, h(5.0));
        assert!(p.is_zero());
        let acc = align_accumulate(&[p]).unwrap();
        assert_eq!(acc.value, Half::ZERO);
    }

    #[test]
    fn single_product_accumulates_to_itself() {
        let p = fp16_mul_decomposed(Half::ONE, Half::ONE);
        let acc = align_accumulate(&[p]).unwrap();
        assert_eq!(acc.value, Half::ONE);
        assert!(!acc.saturated);
    }

    #[test]
    fn cancellation_gives_positive_zero() {
        let p = fp16_mul_decomposed(Half::ONE, Half::ONE);
        let q = fp16_mul_decomposed(h(-1.0), Half::ONE);
        let acc = align_accumulate(&[p, q]).unwrap();
        assert_eq!(acc.value.to_bits(), 0x0000);
    }

    #[test]
    fn empty_accumulation_is_an_error() {
        assert!(matches!(align_accumulate(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn overflow_saturates_and_flags() {
        let big = fp16_mul_decomposed(h(60000.0), h(2.0));
        let acc = align_accumulate(&[big]).unwrap();
        assert!(acc.saturated);
        assert_eq!(acc.value, Half::MAX);
        let neg = fp16_mul_decomposed(h(-60000.0), h(2.0));
        let acc = align_accumulate(&[neg]).unwrap();
        assert!(acc.saturated);
        assert_eq!(acc.value, -Half::MAX);
    }

    #[test]
    fn far_smaller_term_becomes_sticky() {
        // 2^-14 * 2^-14 is shifted well beyond the accumulator width against 2^15.
        let big = fp16_mul_decomposed(h(256.0), h(128.0));
        let tiny = fp16_mul_decomposed(h(6.103515625e-5), h(6.103515625e-5));
        let acc = align_accumulate(&[big, tiny]).unwrap();
        assert_eq!(acc.value, h(32768.0));
    }

    #[test]
    fn construction_rejects_specials_and_flushes_subnormals() {
        assert!(Half::from_bits(0x7C00).is_err());
        assert!(Half::from_bits(0xFE00).is_err());
        assert_eq!(Half::from_bits(0x0001).unwrap(), Half::ZERO);
        assert_eq!(Half::from_bits(0x83FF).unwrap().to_bits(), 0x8000);
        assert!(Half::from_f64(f64::NAN).is_err());
        assert!(Half::from_f64(65520.0).is_err());
        assert_eq!(Half::from_f64(65504.0).unwrap(), Half::MAX);
        assert_eq!(Half::from_f64(1e-6).unwrap(), Half::ZERO);
    }

    #[test]
    fn conversion_rounds_to_nearest_even() {
        // 1 + 2^-11 is halfway between 1 and 1 + 2^-10: ties to even (1.0).
        assert_eq!(h(1.0 + 2f64.powi(-11)), Half::ONE);
        // 1 + 3 * 2^-11 ties upward to the even neighbour 1 + 2^-9.
        assert_eq!(h(1.0 + 3.0 * 2f64.powi(-11)).to_f64(), 1.0 + 2f64.powi(-9));
        assert_eq!(h(0.1).to_bits(), 0x2E66);
    }

    #[test]
    fn array_reconfiguration() {
        let int8 = reconfigure(Precision::Int8);
        let fp16 = reconfigure(Precision::Fp16);
        assert_eq!(int8.peak_multiplies_per_cycle(), 1024);
        assert_eq!(fp16.peak_multiplies_per_cycle(), 256);
        assert_eq!((fp16.rows, fp16.cols), (32, 8));
        assert!(fp16.fits_tile(32, 8));
        assert!(!int8.fits_tile(32, 8));
    }
}
