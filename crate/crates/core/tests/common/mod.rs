#![allow(dead_code)]

use eva_core::vqcore::{Codebook, IndexMatrix, QuantizedLayer, VqConfig};
use eva_core::Matrix;
use rand::Rng;

/// Layer with random codebooks and indices. With `integer` set, codebook
/// entries are small integers so every sum is exact in 64-bit floats.
pub fn random_layer<R: Rng>(rng: &mut R, cfg: VqConfig, k: usize, n: usize, integer: bool) -> QuantizedLayer {
    let d = cfg.vector_dim();
    let size = cfg.codebook_size();
    let groups = (0..cfg.num_groups(n))
        .map(|_| {
            (0..cfg.num_codebooks())
                .map(|_| {
                    let entries = (0..d * size)
                        .map(|_| {
                            if integer {
                                rng.random_range(-8i32..=8) as f64
                            } else {
                                rng.random_range(-1.0..1.0)
                            }
                        })
                        .collect();
                    Codebook::new(d, size, entries).unwrap()
                })
                .collect()
        })
        .collect();
    let v = k / d;
    let indices = (0..cfg.num_codebooks())
        .map(|_| {
            let data = (0..v * n).map(|_| rng.random_range(0..size) as u16).collect();
            IndexMatrix::new(v, n, cfg.index_bits(), data).unwrap()
        })
        .collect();
    QuantizedLayer::new(cfg, (k, n), groups, indices).unwrap()
}

pub fn random_vector<R: Rng>(rng: &mut R, len: usize, integer: bool) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if integer {
                rng.random_range(-16i32..=16) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect()
}

/// Plain triple loop, independent of the library's reference GEMV.
pub fn naive_gemv(x: &[f64], w: &Matrix) -> Vec<f64> {
    let (k, n) = w.shape();
    (0..n)
        .map(|j| (0..k).map(|i| x[i] * w.get(i, j)).sum())
        .collect()
}

/// Largest absolute difference over the largest reference magnitude.
pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    got.iter()
        .zip(want)
        .fold(0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

use eva_core::pearith::Half;

/// Normal half with biased exponent in `exp_range`, random sign and mantissa.
pub fn random_half<R: Rng>(rng: &mut R, exp_range: std::ops::RangeInclusive<u16>) -> Half {
    let sign = if rng.random::<bool>() { 0x8000 } else { 0 };
    let exp = rng.random_range(exp_range);
    let mant = rng.random_range(0..1024u16);
    Half::from_bits(sign | (exp << 10) | mant).unwrap()
}

/// Value of `h` times 2^24 as an integer (exact for every normal half).
pub fn half_scaled24(h: Half) -> i128 {
    if h.is_zero() {
        return 0;
    }
    let m = (h.significand() as i128) << (h.exponent() - 10 + 24);
    if h.is_negative() {
        -m
    } else {
        m
    }
}

/// Exact dot product times 2^48.
pub fn exact_dot_scaled48(a: &[Half], b: &[Half]) -> i128 {
    a.iter().zip(b).map(|(&x, &y)| half_scaled24(x) * half_scaled24(y)).sum()
}

/// Distance between `result` and the exact sum in units of the result's ulp.
/// Results flushed to zero count as exact when the true sum is below the
/// smallest normal.
pub fn ulp_error(result: Half, exact48: i128) -> f64 {
    let r = half_scaled24(result) << 24;
    let diff = (r - exact48).abs();
    if result.is_zero() {
        let min_normal = 1i128 << (48 - 14);
        return if exact48.abs() < min_normal { 0.0 } else { f64::INFINITY };
    }
    let ulp = 1i128 << (result.exponent().max(-14) - 10 + 48);
    diff as f64 / ulp as f64
}
