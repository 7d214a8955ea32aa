//! Raw weight files: magic `EVAW`, then `K` and `N` as little-endian u32,
//! then `K * N` little-endian f32 values in row-major order.

use std::path::Path;

use eva_core::{Error, Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EVAW";

pub fn read_weights(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path)?;
    decode_weights(&bytes)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 12 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Corruption("weight file lacks the EVAW header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (k, n) = (word(4), word(8));
    let expected = k
        .checked_mul(n)
        .and_then(|e| e.checked_mul(4))
        .ok_or_else(|| Error::Dimension(format!("{k} x {n} weights overflow")))?;
    let body = &bytes[12..];
    if body.len() != expected {
        return Err(Error::Dimension(format!(
            "header says {k} x {n} ({expected} bytes), file has {} bytes of data",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(k, n, values)
}

pub fn encode_weights(w: &Matrix) -> Vec<u8> {
    let (k, n) = w.shape();
    let mut out = Vec::with_capacity(12 + 4 * k * n);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for &v in w.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Gaussian-like weights (sum of uniforms) with a little per-column scale.
pub fn synthetic_weights(k: usize, n: usize, seed: u64) -> Result<Matrix> {
    if k == 0 || n == 0 {
        return Err(Error::Dimension("synthetic weights need K, N >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut values = Vec::with_capacity(k * n);
    for _ in 0..k {
        for s in &scales {
            let g: f64 = (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.5;
            values.push(g * s);
        }
    }
    Matrix::from_vec(k, n, values)
}
