//! Stage-pipelined cycle model.
//!
//! VQ decode processes the reduction dimension in tiles of `v * d` inputs.
//! Per tile three stages overlap: output-codebook GEMM on the FP16 array,
//! lookup/reduction in the epilogue units, and streaming of the tile's weight
//! indices from DRAM. A tile costs the slowest of the three; fill/drain is
//! paid once per layer.

mod baseline;
mod energy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vqcore::VqConfig;

pub use baseline::{
    baseline_counters, baseline_decode_latency, baseline_prefill_latency, decode_utilization,
    prefill_counters, prefill_latency, weight_stationary_cycles, BaselineSpec, WsCycles,
};
pub use energy::{decode_counters, energy, EnergyBreakdown, EnergyParams, EventCounters};

/// On-chip buffer capacities in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSizes {
    pub weight_codebook: u64,
    pub weight: u64,
    pub input: u64,
    pub output_codebook: u64,
    pub output: u64,
}

impl BufferSizes {
    pub fn total(&self) -> u64 {
        self.weight_codebook + self.weight + self.input + self.output_codebook + self.output
    }
}

impl Default for BufferSizes {
    fn default() -> Self {
        const KB: u64 = 1024;
        Self {
            weight_codebook: 16 * KB,
            weight: 256 * KB,
            input: 32 * KB,
            output_codebook: 192 * KB,
            output: 32 * KB,
        }
    }
}

/// GEMM tiling used by the weight-stationary INT8 path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmTiling {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

/// Hardware parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchSpec {
    /// INT8 weight-stationary array (rows, cols).
    pub int8_array: (usize, usize),
    /// Same array fused for FP16 (rows, cols).
    pub fp16_array: (usize, usize),
    pub num_eus: usize,
    /// Inputs per epilogue adder tree; also the tile height `v`.
    pub eu_width: usize,
    pub frequency_hz: f64,
    pub dram_bytes_per_cycle: f64,
    pub buffers: BufferSizes,
    /// FP16 pipeline fill/drain, paid once per layer.
    pub fill_cycles: u64,
    /// INT8 array fill per weight tile.
    pub int8_fill_cycles: u64,
    pub prefill_tiling: GemmTiling,
    /// Count activation bytes in baseline decode traffic.
    pub baseline_activation_traffic: bool,
}

impl Default for ArchSpec {
    /// 32x32 INT8 / 32x8 FP16 array, four 32-input adder trees, 64 GB/s at
    /// 500 MHz, 528 KB of buffers.
    fn default() -> Self {
        let (v, d) = (32u64, 8u64);
        Self {
            int8_array: (32, 32),
            fp16_array: (32, 8),
            num_eus: 4,
            eu_width: v as usize,
            frequency_hz: 500e6,
            dram_bytes_per_cycle: 64e9 / 500e6,
            buffers: BufferSizes::default(),
            fill_cycles: v + d - 2,
            int8_fill_cycles: 32,
            prefill_tiling: GemmTiling {
                m: 1024,
                k: 32,
                n: 1024,
            },
            baseline_activation_traffic: false,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dram_bytes_per_cycle <= 0.0 || !self.dram_bytes_per_cycle.is_finite() {
            return Err(Error::config("dram_bytes_per_cycle must be positive and finite"));
        }
        if self.num_eus == 0 {
            return Err(Error::config("at least one epilogue unit is required"));
        }
        if self.eu_width == 0 {
            return Err(Error::config("epilogue adder width must be positive"));
        }
        let (r, c) = self.int8_array;
        let (fr, fc) = self.fp16_array;
        if r == 0 || c == 0 || fr == 0 || fc == 0 {
            return Err(Error::config("PE array dimensions must be positive"));
        }
        let t = self.prefill_tiling;
        if t.m == 0 || t.k == 0 || t.n == 0 {
            return Err(Error::config("prefill tiling must be positive"));
        }
        if self.frequency_hz <= 0.0 || self.frequency_hz.is_nan() {
            return Err(Error::config("frequency must be positive"));
        }
        Ok(())
    }

    pub fn with_eus(mut self, num_eus: usize) -> Self {
        self.num_eus = num_eus;
        self
    }

    pub fn with_bandwidth(mut self, bytes_per_cycle: f64) -> Self {
        self.dram_bytes_per_cycle = bytes_per_cycle;
        self
    }

    pub fn cycles_to_seconds(&self, cycles: u64) -> f64 {
        cycles as f64 / self.frequency_hz
    }
}

/// GEMM dimensions: `K` reduction, `N` output channels, `M` token rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub k: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub m: usize,
}

fn one() -> usize {
    1
}

impl LayerShape {
    pub fn new(k: usize, n: usize, m: usize) -> Result<Self> {
        if k == 0 || n == 0 || m == 0 {
            return Err(Error::dim(format!("layer dims must be >= 1, got K={k} N={n} M={m}")));
        }
        Ok(Self { k, n, m })
    }

    /// Single-token decode shape.
    pub fn decode(k: usize, n: usize) -> Self {
        Self { k, n, m: 1 }
    }

    pub fn with_tokens(self, m: usize) -> Self {
        Self { m, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gemm,
    Epilogue,
    Memory,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Gemm => "gemm",
            Stage::Epilogue => "epilogue",
            Stage::Memory => "memory",
        }
    }
}

/// Per-tile stage costs of a VQ decode layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageCycles {
    pub gemm: u64,
    pub epilogue: u64,
    pub memory: u64,
    pub per_tile: u64,
    pub tiles: u64,
    pub fill: u64,
}

impl StageCycles {
    pub fn latency(&self) -> u64 {
        self.tiles * self.per_tile + self.fill
    }

    /// Slowest stage; ties resolve in the order gemm, epilogue, memory.
    pub fn dominant(&self) -> Stage {
        let mut best = (Stage::Gemm, self.gemm);
        for (s, c) in [(Stage::Epilogue, self.epilogue), (Stage::Memory, self.memory)] {
            if c > best.1 {
                best = (s, c);
            }
        }
        best.0
    }
}

/// Balance of output-codebook work against epilogue work, `2^n / N_share`.
pub fn pe_eu_ratio(index_bits: u32, group_size: usize) -> f64 {
    (1u64 << index_bits) as f64 / group_size as f64
}

/// Whether the GEMM stage is expected to outrun the epilogue: the GEMM stage
/// costs `E * 2^n / N_share` times the epilogue for a full group.
pub fn predicts_gemm_bound(index_bits: u32, group_size: usize, num_eus: usize) -> bool {
    pe_eu_ratio(index_bits, group_size) * num_eus as f64 > 1.0
}

fn memory_cycles_per_tile(arch: &ArchSpec, cfg: &VqConfig, n: usize) -> u64 {
    let bits = arch.eu_width as f64 * n as f64 * cfg.num_codebooks() as f64 * cfg.index_bits() as f64;
    (bits / (8.0 * arch.dram_bytes_per_cycle)).ceil() as u64
}

/// Tiles over the reduction dimension; `K` is zero-padded to a multiple of
/// `d * v`.
pub fn decode_tiles(arch: &ArchSpec, cfg: &VqConfig, k: usize) -> u64 {
    k.div_ceil(cfg.vector_dim() * arch.eu_width) as u64
}

pub fn decode_stage_cycles(
    arch: &ArchSpec,
    cfg: &VqConfig,
    layer: &LayerShape,
    batch: usize,
) -> Result<StageCycles> {
    arch.validate()?;
    if batch == 0 {
        return Err(Error::config("batch must be at least 1"));
    }
    let b = batch as u64;
    let groups = cfg.num_groups(layer.n) as u64;
    let c = cfg.num_codebooks() as u64;
    let gemm = b * groups * c * cfg.codebook_size() as u64;
    let epilogue = (b * c * layer.n as u64).div_ceil(arch.num_eus as u64);
    let memory = memory_cycles_per_tile(arch, cfg, layer.n);
    Ok(StageCycles {
        gemm,
        epilogue,
        memory,
        per_tile: gemm.max(epilogue).max(memory),
        tiles: decode_tiles(arch, cfg, layer.k),
        fill: arch.fill_cycles,
    })
}

/// Smallest EU count whose epilogue stage no longer exceeds the memory stage.
pub fn eu_saturation_point(arch: &ArchSpec, cfg: &VqConfig, layer: &LayerShape) -> usize {
    let work = cfg.num_codebooks() as u64 * layer.n as u64;
    let memory = memory_cycles_per_tile(arch, cfg, layer.n).max(1);
    work.div_ceil(memory).max(1) as usize
}

/// A named quantization configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedConfig {
    pub name: String,
    pub config: VqConfig,
}

impl NamedConfig {
    pub fn new(name: impl Into<String>, config: VqConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

/// Published VQ schemes on a 4096-wide layer. The first entry (AQLM 2x8) is
/// the usual normalization reference.
pub fn latency_table_configs() -> Vec<NamedConfig> {
    let cfg = |d, n, c, s| VqConfig::new(d, n, c, s).expect("static config");
    vec![
        NamedConfig::new("AQLM 2x8", cfg(8, 8, 2, 4096)),
        NamedConfig::new("AQLM 3x8", cfg(8, 8, 3, 4096)),
        NamedConfig::new("AQLM 2x12", cfg(8, 12, 2, 4096)),
        NamedConfig::new("AQLM 4x8", cfg(8, 8, 4, 4096)),
        NamedConfig::new("AQLM 1x16", cfg(8, 16, 1, 4096)),
        NamedConfig::new("GPTVQ-4D", cfg(4, 8, 1, 256)),
        NamedConfig::new("Hypothesized", cfg(4, 8, 1, 4096)),
    ]
}

/// Single-token decode latency of each config divided by that of `reference`.
pub fn normalized_latency(
    configs: &[NamedConfig],
    reference: &VqConfig,
    arch: &ArchSpec,
    layer: &LayerShape,
) -> Result<Vec<(String, f64)>> {
    let base = decode_stage_cycles(arch, reference, layer, 1)?.latency() as f64;
    configs
        .iter()
        .map(|nc| {
            let lat = decode_stage_cycles(arch, &nc.config, layer, 1)?.latency() as f64;
            Ok((nc.name.clone(), lat / base))
        })
        .collect()
}

/// Smallest batch in `1..=max_batch` at which VQ decode is slower than the
/// INT8 weight-stationary path, if any.
pub fn batch_crossover(
    arch: &ArchSpec,
    layer: &LayerShape,
    vq: &VqConfig,
    int8: &BaselineSpec,
    max_batch: usize,
) -> Result<Option<usize>> {
    for b in 1..=max_batch {
        let vq_lat = decode_stage_cycles(arch, vq, layer, b)?.latency();
        let int8_lat = baseline_decode_latency(int8, layer, b, arch)?;
        if vq_lat > int8_lat {
            return Ok(Some(b));
        }
    }
    Ok(None)
}
