//! Vector-quantized matrix-vector engine and accelerator performance model.
//!
//! The crate is split by subsystem:
//!
//! * [`vqcore`]: additive codebooks, residual k-means training, dequantization,
//!   the binary layer container and codebook-utilization analysis.
//! * [`kernels`]: the reference GEMV and the reformulated path that multiplies
//!   the reshaped input with the codebook to form an output codebook, followed
//!   by an add-only lookup epilogue.
//! * [`pearith`]: bit-level model of the mixed-precision processing element
//!   (FP16 products from four 8-bit partial products, aligned INT32
//!   accumulation).
//! * [`memsys`]: banked-buffer scheduling, conventional codebook bank
//!   conflicts, hot/cold replication and the row-per-bank output-codebook
//!   mapping.
//! * [`perfsim`]: stage-pipelined decode model, weight-stationary baselines,
//!   prefill, and the parametric energy model.
//! * [`studies`]: sweep drivers, the conflict-mitigation comparison and
//!   end-to-end trace simulation.

pub mod config;
pub mod error;
pub mod kernels;
pub mod matrix;
pub mod memsys;
pub mod pearith;
pub mod perfsim;
pub mod studies;
pub mod vqcore;

pub use error::{Error, Result};
pub use matrix::Matrix;
