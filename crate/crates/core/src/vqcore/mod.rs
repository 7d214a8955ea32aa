//! Additive vector quantization of weight matrices.
//!
//! A `K x N` weight matrix is cut into `d`-element column slices. Each slice is
//! approximated by the sum of `C` centroids, one from each codebook, and only
//! the `n`-bit centroid indices are stored. Output channels are grouped in
//! contiguous runs of `N_share` columns; every group owns its own set of `C`
//! codebooks.

mod container;
mod kmeans;
mod train;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pearith::Half;

pub use container::{decode_layer, encode_layer, read_layer, write_layer, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use kmeans::{kmeans, KMeansParams, KMeansResult};
pub use train::{train_codebooks, train_codebooks_with_report, TrainReport};

pub const MAX_INDEX_BITS: u32 = 16;

/// Quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawVqConfig", into = "RawVqConfig")]
pub struct VqConfig {
    vector_dim: usize,
    index_bits: u32,
    num_codebooks: usize,
    group_size: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVqConfig {
    d: usize,
    n: u32,
    c: usize,
    n_share: usize,
}

impl TryFrom<RawVqConfig> for VqConfig {
    type Error = Error;

    fn try_from(raw: RawVqConfig) -> Result<Self> {
        VqConfig::new(raw.d, raw.n, raw.c, raw.n_share)
    }
}

impl From<VqConfig> for RawVqConfig {
    fn from(cfg: VqConfig) -> Self {
        RawVqConfig {
            d: cfg.vector_dim,
            n: cfg.index_bits,
            c: cfg.num_codebooks,
            n_share: cfg.group_size,
        }
    }
}

impl VqConfig {
    /// `vector_dim` elements per vector, `index_bits` bits per index,
    /// `num_codebooks` additive codebooks and `group_size` output channels
    /// sharing one codebook set.
    pub fn new(
        vector_dim: usize,
        index_bits: u32,
        num_codebooks: usize,
        group_size: usize,
    ) -> Result<Self> {
        if vector_dim == 0 {
            return Err(Error::config("vector dimension d must be at least 1"));
        }
        if !(1..=MAX_INDEX_BITS).contains(&index_bits) {
            return Err(Error::config(format!(
                "index bit-width n must lie in 1..=16, got {index_bits}"
            )));
        }
        if num_codebooks == 0 {
            return Err(Error::config("codebook count C must be at least 1"));
        }
        if group_size == 0 {
            return Err(Error::config("N_share must be at least 1"));
        }
        Ok(Self {
            vector_dim,
            index_bits,
            num_codebooks,
            group_size,
        })
    }

    #[inline]
    pub fn vector_dim(&self) -> usize {
        self.vector_dim
    }

    #[inline]
    pub fn index_bits(&self) -> u32 {
        self.index_bits
    }

    #[inline]
    pub fn num_codebooks(&self) -> usize {
        self.num_codebooks
    }

    #[inline]
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Number of centroids per codebook, `2^n`.
    #[inline]
    pub fn codebook_size(&self) -> usize {
        1usize << self.index_bits
    }

    /// Codebook groups for a layer with `out_features` output channels.
    pub fn num_groups(&self, out_features: usize) -> usize {
        out_features.div_ceil(self.group_size)
    }

    pub fn with_group_size(self, group_size: usize) -> Result<Self> {
        Self::new(self.vector_dim, self.index_bits, self.num_codebooks, group_size)
    }

    pub fn with_num_codebooks(self, num_codebooks: usize) -> Result<Self> {
        Self::new(self.vector_dim, self.index_bits, num_codebooks, self.group_size)
    }

    /// Average storage bits per weight, `C * n / d`.
    pub fn effective_bitwidth(&self) -> f64 {
        (self.num_codebooks as f64 * self.index_bits as f64) / self.vector_dim as f64
    }
}

pub fn effective_bitwidth(config: &VqConfig) -> f64 {
    config.effective_bitwidth()
}

/// `d x 2^n` table of centroids; column `e` is centroid `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    size: usize,
    entries: Vec<f64>,
}

impl Codebook {
    /// `entries` is row-major `dim x size`.
    pub fn new(dim: usize, size: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || size == 0 || !size.is_power_of_two() {
            return Err(Error::dim(format!(
                "codebook must be d x 2^n, got {dim} x {size}"
            )));
        }
        if entries.len() != dim * size {
            return Err(Error::dim(format!(
                "{} entries cannot fill a {dim} x {size} codebook",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::corrupt("codebook contains non-finite entries"));
        }
        Ok(Self { dim, size, entries })
    }

    pub fn zeros(dim: usize, size: usize) -> Self {
        Self {
            dim,
            size,
            entries: vec![0.0; dim * size],
        }
    }

    /// Builds a codebook from centroid vectors stored contiguously
    /// (`size` vectors of `dim` values).
    pub fn from_centroids(dim: usize, centroids: &[f64]) -> Result<Self> {
        if dim == 0 || !centroids.len().is_multiple_of(dim) {
            return Err(Error::dim("centroid buffer is not a multiple of d"));
        }
        let size = centroids.len() / dim;
        let mut entries = vec![0.0; dim * size];
        for e in 0..size {
            for t in 0..dim {
                entries[t * size + e] = centroids[e * dim + t];
            }
        }
        Self::new(dim, size, entries)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, row: usize, entry: usize) -> f64 {
        self.entries[row * self.size + entry]
    }

    pub fn centroid(&self, entry: usize) -> Vec<f64> {
        (0..self.dim).map(|t| self.get(t, entry)).collect()
    }

    /// Row-major `d x 2^n` storage.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// FP16 export (round-to-nearest-even), row-major like [`entries`](Self::entries).
    pub fn to_half(&self) -> Result<Vec<Half>> {
        self.entries.iter().map(|&v| Half::from_f64(v)).collect()
    }
}

/// `V x N` grid of `n`-bit centroid indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    bits: u32,
    data: Vec<u16>,
}

impl IndexMatrix {
    pub fn new(rows: usize, cols: usize, bits: u32, data: Vec<u16>) -> Result<Self> {
        if !(1..=MAX_INDEX_BITS).contains(&bits) {
            return Err(Error::config(format!("index bit-width {bits} out of range")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} indices cannot fill a {rows} x {cols} grid",
                data.len()
            )));
        }
        let limit = 1u32 << bits;
        if let Some(bad) = data.iter().find(|&&i| i as u32 >= limit) {
            return Err(Error::corrupt(format!(
                "index {bad} does not fit in {bits} bits"
            )));
        }
        Ok(Self {
            rows,
            cols,
            bits,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, bits: u32) -> Result<Self> {
        Self::new(rows, cols, bits, vec![0; rows * cols])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.data[row * self.cols + col] as usize
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, index: usize) {
        debug_assert!(index < (1usize << self.bits));
        self.data[row * self.cols + col] = index as u16;
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }

    /// Access counts per index value (`2^n` bins).
    pub fn histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; 1 << self.bits];
        for &i in &self.data {
            hist[i as usize] += 1;
        }
        hist
    }
}

/// A weight matrix in compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    config: VqConfig,
    in_features: usize,
    out_features: usize,
    /// `groups[g][c]`: codebook `c` of column group `g`.
    groups: Vec<Vec<Codebook>>,
    /// One index grid per codebook.
    indices: Vec<IndexMatrix>,
}

impl QuantizedLayer {
    pub fn new(
        config: VqConfig,
        shape: (usize, usize),
        groups: Vec<Vec<Codebook>>,
        indices: Vec<IndexMatrix>,
    ) -> Result<Self> {
        let (k, n) = shape;
        let d = config.vector_dim();
        if k == 0 || n == 0 {
            return Err(Error::dim("layer shape must be non-empty"));
        }
        if k % d != 0 {
            return Err(Error::dim(format!("K = {k} is not divisible by d = {d}")));
        }
        let v = k / d;
        let expected_groups = config.num_groups(n);
        if groups.len() != expected_groups {
            return Err(Error::dim(format!(
                "expected {expected_groups} codebook groups, got {}",
                groups.len()
            )));
        }
        for set in &groups {
            if set.len() != config.num_codebooks() {
                return Err(Error::dim("codebook group has the wrong number of codebooks"));
            }
            for cb in set {
                if cb.dim() != d || cb.size() != config.codebook_size() {
                    return Err(Error::dim(format!(
                        "codebook is {} x {}, expected {d} x {}",
                        cb.dim(),
                        cb.size(),
                        config.codebook_size()
                    )));
                }
            }
        }
        if indices.len() != config.num_codebooks() {
            return Err(Error::dim("one index matrix per codebook is required"));
        }
        for im in &indices {
            if im.rows() != v || im.cols() != n {
                return Err(Error::dim(format!(
                    "index matrix is {} x {}, expected {v} x {n}",
                    im.rows(),
                    im.cols()
                )));
            }
            if im.bits() != config.index_bits() {
                return Err(Error::corrupt("index matrix bit-width differs from config"));
            }
        }
        Ok(Self {
            config,
            in_features: k,
            out_features: n,
            groups,
            indices,
        })
    }

    #[inline]
    pub fn config(&self) -> &VqConfig {
        &self.config
    }

    /// `(K, N)` of the original weight matrix.
    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.in_features, self.out_features)
    }

    /// Rows of each index matrix, `K / d`.
    #[inline]
    pub fn vector_rows(&self) -> usize {
        self.in_features / self.config.vector_dim()
    }

    pub fn groups(&self) -> &[Vec<Codebook>] {
        &self.groups
    }

    pub fn indices(&self) -> &[IndexMatrix] {
        &self.indices
    }

    /// Column range owned by codebook group `g`; the last group may be short.
    pub fn group_columns(&self, g: usize) -> std::ops::Range<usize> {
        let s = self.config.group_size();
        (g * s)..((g + 1) * s).min(self.out_features)
    }

    #[inline]
    pub fn group_of(&self, col: usize) -> usize {
        col / self.config.group_size()
    }

    /// Reconstructs the `K x N` weight matrix.
    pub fn dequantize(&self) -> Result<Matrix> {
        let d = self.config.vector_dim();
        let size = self.config.codebook_size();
        let mut w = Matrix::zeros(self.in_features, self.out_features);
        for (c, im) in self.indices.iter().enumerate() {
            for r in 0..im.rows() {
                for j in 0..im.cols() {
                    let e = im.get(r, j);
                    if e >= size {
                        return Err(Error::corrupt(format!(
                            "index {e} at ({r}, {j}) exceeds codebook size {size}"
                        )));
                    }
                    let cb = &self.groups[self.group_of(j)][c];
                    for t in 0..d {
                        let k = r * d + t;
                        w.set(k, j, w.get(k, j) + cb.get(t, e));
                    }
                }
            }
        }
        Ok(w)
    }
}

pub fn dequantize(layer: &QuantizedLayer) -> Result<Matrix> {
    layer.dequantize()
}

/// Expected fraction of the `2^n` centroids referenced at least once when
/// `channels` indices are drawn uniformly: `1 - (1 - 2^-n)^channels`.
pub fn expected_utilization(index_bits: u32, channels: u64) -> f64 {
    if channels == 0 {
        return 0.0;
    }
    let p = 2f64.powi(-(index_bits as i32));
    -(channels as f64 * (-p).ln_1p()).exp_m1()
}

/// Fraction of codebook entries that appear in `indices`.
pub fn empirical_utilization(indices: &IndexMatrix) -> f64 {
    let distinct: HashSet<u16> = indices.as_slice().iter().copied().collect();
    distinct.len() as f64 / (1u64 << indices.bits()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_bitwidth_matches_table_rows() {
        assert_eq!(VqConfig::new(8, 8, 2, 4096).unwrap().effective_bitwidth(), 2.0);
        assert_eq!(VqConfig::new(8, 8, 4, 4096).unwrap().effective_bitwidth(), 4.0);
        assert_eq!(VqConfig::new(4, 8, 1, 256).unwrap().effective_bitwidth(), 2.0);
        assert_eq!(VqConfig::new(8, 12, 2, 4096).unwrap().effective_bitwidth(), 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(VqConfig::new(0, 8, 1, 1).is_err());
        assert!(VqConfig::new(8, 0, 1, 1).is_err());
        assert!(VqConfig::new(8, 17, 1, 1).is_err());
        assert!(VqConfig::new(8, 8, 0, 1).is_err());
        assert!(VqConfig::new(8, 8, 1, 0).is_err());
        assert!(VqConfig::new(1, 16, 1, 1).is_ok());
    }

    #[test]
    fn config_json_uses_short_keys_and_validates() {
        let cfg: VqConfig = serde_json::from_str(r#"{"d":8,"n":8,"c":2,"n_share":4096}"#).unwrap();
        assert_eq!(cfg, VqConfig::new(8, 8, 2, 4096).unwrap());
        assert!(serde_json::from_str::<VqConfig>(r#"{"d":8,"n":20,"c":2,"n_share":1}"#).is_err());
        let err = serde_json::from_str::<VqConfig>(r#"{"d":8,"n":8,"c":2,"n_share":1,"q":2}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("`q`"), "{err}");
    }

    #[test]
    fn utilization_closed_form() {
        assert!((expected_utilization(8, 1024) - 0.982).abs() < 5e-4);
        assert_eq!(expected_utilization(5, 0), 0.0);
        assert_eq!(expected_utilization(1, 1), 0.5);
        let direct = 1.0 - (1.0 - 1.0 / 256.0f64).powi(1024);
        assert!((expected_utilization(8, 1024) - direct).abs() < 1e-12);
    }

    #[test]
    fn empirical_utilization_extremes() {
        let all: Vec<u16> = (0..16).collect();
        let m = IndexMatrix::new(4, 4, 4, all).unwrap();
        assert_eq!(empirical_utilization(&m), 1.0);
        let z = IndexMatrix::zeros(3, 5, 4).unwrap();
        assert_eq!(empirical_utilization(&z), 1.0 / 16.0);
    }

    #[test]
    fn index_matrix_rejects_wide_indices() {
        assert!(matches!(
            IndexMatrix::new(1, 2, 2, vec![1, 4]),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn dequantize_all_zero_indices_repeats_centroid_zero() {
        let cfg = VqConfig::new(2, 2, 1, 3).unwrap();
        let cb = Codebook::from_centroids(2, &[1.0, -2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let layer = QuantizedLayer::new(
            cfg,
            (4, 3),
            vec![vec![cb]],
            vec![IndexMatrix::zeros(2, 3, 2).unwrap()],
        )
        .unwrap();
        let w = layer.dequantize().unwrap();
        for j in 0..3 {
            assert_eq!([w.get(0, j), w.get(1, j), w.get(2, j), w.get(3, j)], [1.0, -2.0, 1.0, -2.0]);
        }
    }

    #[test]
    fn short_last_group() {
        let cfg = VqConfig::new(1, 1, 1, 2).unwrap();
        let groups = vec![
            vec![Codebook::from_centroids(1, &[1.0, 2.0]).unwrap()],
            vec![Codebook::from_centroids(1, &[10.0, 20.0]).unwrap()],
        ];
        let im = IndexMatrix::new(1, 3, 1, vec![0, 1, 1]).unwrap();
        let layer = QuantizedLayer::new(cfg, (1, 3), groups, vec![im]).unwrap();
        assert_eq!(layer.group_columns(1), 2..3);
        let w = layer.dequantize().unwrap();
        assert_eq!(w.as_slice(), &[1.0, 2.0, 20.0]);
    }

    #[test]
    fn half_export_rounds_to_nearest_even() {
        let cb = Codebook::from_centroids(1, &[0.1, 1.0 + 2f64.powi(-11)]).unwrap();
        let h = cb.to_half().unwrap();
        assert_eq!(h[0].to_bits(), 0x2E66);
        assert_eq!(h[1], Half::ONE);
    }
}
