//! Reference and reformulated matrix-vector paths.
//!
//! The reformulated path reshapes the input vector `x` (length `K`) into a
//! `V x d` matrix `X` and multiplies it with each `d x 2^n` codebook, giving a
//! `V x 2^n` output codebook `O = X B`. Output channel `j` is then
//! `sum_c sum_r O_c[r, I_c[r, j]]`, which needs only table lookups and adds.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pearith::{self, Half, PeCounters};
use crate::vqcore::{Codebook, IndexMatrix, QuantizedLayer, VqConfig};

/// Arithmetic used by the reformulated path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ArithMode {
    /// 64-bit reals throughout.
    #[default]
    Exact64,
    /// Output-codebook dot products on the FP16 PE model; epilogue sums in
    /// 32-bit floats.
    DeviceFaithful,
}

/// Operation counters for instrumented runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelCounters {
    pub gemm_multiplies: u64,
    pub gemm_adds: u64,
    pub epilogue_multiplies: u64,
    pub epilogue_adds: u64,
    pub epilogue_lookups: u64,
    pub pe: PeCounters,
}

/// Input vector viewed as `V x d`; row `r` holds elements `[r*d, (r+1)*d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReshapedInput {
    rows: Matrix,
    source_len: usize,
}

impl ReshapedInput {
    pub fn new(x: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || x.is_empty() || !x.len().is_multiple_of(dim) {
            return Err(Error::dim(format!(
                "input length {} is not a positive multiple of d = {dim}",
                x.len()
            )));
        }
        Ok(Self {
            rows: Matrix::from_vec(x.len() / dim, dim, x.to_vec())?,
            source_len: x.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.rows.row(r)
    }
}

/// `V x 2^n` table of partial dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputCodebook {
    values: Matrix,
}

impl OutputCodebook {
    pub fn from_matrix(values: Matrix) -> Self {
        Self { values }
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn entries(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn get(&self, row: usize, entry: usize) -> f64 {
        self.values.get(row, entry)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.values
    }
}

/// `y = x W` with sequential 64-bit accumulation over `k`.
pub fn gemv_reference(x: &[f64], w: &Matrix) -> Result<Vec<f64>> {
    if x.len() != w.rows() {
        return Err(Error::dim(format!(
            "input length {} does not match weight height {}",
            x.len(),
            w.rows()
        )));
    }
    let mut y = vec![0.0; w.cols()];
    for (j, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate() {
            acc += xk * w.get(k, j);
        }
        *out = acc;
    }
    Ok(y)
}

pub fn build_output_codebook(x: &ReshapedInput, codebook: &Codebook) -> Result<OutputCodebook> {
    build_output_codebook_with(x, codebook, ArithMode::Exact64, &mut KernelCounters::default())
}

pub fn build_output_codebook_with(
    x: &ReshapedInput,
    codebook: &Codebook,
    mode: ArithMode,
    counters: &mut KernelCounters,
) -> Result<OutputCodebook> {
    let d = x.dim();
    if codebook.dim() != d {
        return Err(Error::dim(format!(
            "input rows have {d} columns but the codebook has {} rows",
            codebook.dim()
        )));
    }
    let (v, size) = (x.rows(), codebook.size());
    let mut out = Matrix::zeros(v, size);
    match mode {
        ArithMode::Exact64 => {
            for r in 0..v {
                let row = x.row(r);
                for e in 0..size {
                    let mut acc = 0.0;
                    for (t, &xt) in row.iter().enumerate() {
                        acc += xt * codebook.get(t, e);
                    }
                    out.set(r, e, acc);
                }
            }
            let macs = (v * size * d) as u64;
            counters.gemm_multiplies += macs;
            counters.gemm_adds += macs;
        }
        ArithMode::DeviceFaithful => {
            let centroids: Vec<Vec<Half>> = (0..size)
                .map(|e| {
                    (0..d)
                        .map(|t| Half::from_f64(codebook.get(t, e)))
                        .collect::<Result<_>>()
                })
                .collect::<Result<_>>()?;
            for r in 0..v {
                let row: Vec<Half> = x.row(r).iter().map(|&xt| Half::from_f64(xt)).collect::<Result<_>>()?;
                for (e, centroid) in centroids.iter().enumerate() {
                    let acc = pearith::dot(&row, centroid, &mut counters.pe)?;
                    out.set(r, e, acc.value.to_f64());
                }
            }
            let macs = (v * size * d) as u64;
            counters.gemm_multiplies += macs;
            counters.gemm_adds += macs;
        }
    }
    Ok(OutputCodebook { values: out })
}

/// Add-only lookup and reduction for the output channels in `columns`.
///
/// Codebooks are summed outermost and rows innermost, matching the diagonal
/// epilogue schedule.
pub fn epilogue_lookup_reduce(
    outputs: &[OutputCodebook],
    indices: &[IndexMatrix],
    columns: Range<usize>,
) -> Result<Vec<f64>> {
    epilogue_lookup_reduce_with(outputs, indices, columns, ArithMode::Exact64, &mut KernelCounters::default())
}

pub fn epilogue_lookup_reduce_with(
    outputs: &[OutputCodebook],
    indices: &[IndexMatrix],
    columns: Range<usize>,
    mode: ArithMode,
    counters: &mut KernelCounters,
) -> Result<Vec<f64>> {
    if outputs.len() != indices.len() || outputs.is_empty() {
        return Err(Error::dim(format!(
            "{} output codebooks for {} index matrices",
            outputs.len(),
            indices.len()
        )));
    }
    for (o, im) in outputs.iter().zip(indices) {
        if o.rows() != im.rows() {
            return Err(Error::dim(format!(
                "output codebook has {} rows, index matrix {}",
                o.rows(),
                im.rows()
            )));
        }
        if columns.end > im.cols() {
            return Err(Error::dim(format!(
                "column range {columns:?} exceeds {} columns",
                im.cols()
            )));
        }
    }

    let mut y = Vec::with_capacity(columns.len());
    for j in columns {
        let mut acc64 = 0.0f64;
        let mut acc32 = 0.0f32;
        for (o, im) in outputs.iter().zip(indices) {
            for r in 0..im.rows() {
                let e = im.get(r, j);
                if e >= o.entries() {
                    return Err(Error::corrupt(format!(
                        "index {e} at ({r}, {j}) exceeds output codebook width {}",
                        o.entries()
                    )));
                }
                let value = o.get(r, e);
                counters.epilogue_lookups += 1;
                match mode {
                    ArithMode::Exact64 => acc64 += value,
                    ArithMode::DeviceFaithful => acc32 += value as f32,
                }
                counters.epilogue_adds += 1;
            }
        }
        y.push(match mode {
            ArithMode::Exact64 => acc64,
            ArithMode::DeviceFaithful => acc32 as f64,
        });
    }
    Ok(y)
}

pub fn vq_matvec(x: &[f64], layer: &QuantizedLayer) -> Result<Vec<f64>> {
    vq_matvec_with(x, layer, ArithMode::Exact64, &mut KernelCounters::default())
}

/// Reshape, build one output codebook per (group, codebook), then run the
/// epilogue over each group's columns.
pub fn vq_matvec_with(
    x: &[f64],
    layer: &QuantizedLayer,
    mode: ArithMode,
    counters: &mut KernelCounters,
) -> Result<Vec<f64>> {
    let (k, n) = layer.shape();
    if x.len() != k {
        return Err(Error::dim(format!("input length {} does not match K = {k}", x.len())));
    }
    let reshaped = ReshapedInput::new(x, layer.config().vector_dim())?;
    let mut y = Vec::with_capacity(n);
    for (g, set) in layer.groups().iter().enumerate() {
        let outputs = set
            .iter()
            .map(|cb| build_output_codebook_with(&reshaped, cb, mode, counters))
            .collect::<Result<Vec<_>>>()?;
        y.extend(epilogue_lookup_reduce_with(
            &outputs,
            layer.indices(),
            layer.group_columns(g),
            mode,
            counters,
        )?);
    }
    Ok(y)
}

/// Work of the dense GEMV against the reformulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCounts {
    pub gemv_macs: u64,
    pub vq_macs: u64,
    pub epilogue_adds: u64,
    pub reduction_factor: f64,
}

pub fn op_counts(k: usize, n: usize, config: &VqConfig) -> OpCounts {
    let groups = config.num_groups(n) as u64;
    let (k64, n64) = (k as u64, n as u64);
    let c = config.num_codebooks() as u64;
    let gemv_macs = k64 * n64;
    let vq_macs = groups * c * k64 * config.codebook_size() as u64;
    let epilogue_adds = c * (k / config.vector_dim()) as u64 * n64;
    OpCounts {
        gemv_macs,
        vq_macs,
        epilogue_adds,
        reduction_factor: gemv_macs as f64 / vq_macs as f64,
    }
}
