//! Weight-stationary GEMM model shared by the baseline accelerators, the INT8
//! mode of the PE array and prefill.
//!
//! The array holds one `rows x cols` weight tile while `m` activation rows
//! stream through it; every tile pays a fill latency. With `m = 1` (decode)
//! only one of the array's rows of work is useful per cycle, which is where
//! the low decode utilization of these designs comes from.

use serde::{Deserialize, Serialize};

use super::{energy::EventCounters, ArchSpec, LayerShape};
use crate::error::{Error, Result};

/// Parametric stand-in for a weight-stationary accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub name: String,
    pub weight_bits: u32,
    pub act_bits: u32,
    /// MACs per cycle at full utilization (the INT8 array size).
    pub macs_per_cycle: u64,
    pub tile_fill_cycles: u64,
    /// Throughput gain over a plain systolic array (e.g. LUT reuse).
    pub throughput_multiplier: f64,
}

const ALLOWED_BITS: [u32; 5] = [2, 3, 4, 8, 16];

impl BaselineSpec {
    pub fn new(
        name: impl Into<String>,
        weight_bits: u32,
        act_bits: u32,
        tile_fill_cycles: u64,
        throughput_multiplier: f64,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            weight_bits,
            act_bits,
            macs_per_cycle: 1024,
            tile_fill_cycles,
            throughput_multiplier,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_BITS.contains(&self.weight_bits) || !ALLOWED_BITS.contains(&self.act_bits) {
            return Err(Error::config(format!(
                "{}: weight/activation bits must be one of {ALLOWED_BITS:?}",
                self.name
            )));
        }
        if self.throughput_multiplier <= 0.0 || !self.throughput_multiplier.is_finite() {
            return Err(Error::config(format!(
                "{}: throughput_multiplier must be positive",
                self.name
            )));
        }
        if self.macs_per_cycle == 0 {
            return Err(Error::config(format!("{}: macs_per_cycle must be positive", self.name)));
        }
        Ok(())
    }

    /// FP16 systolic array.
    pub fn systolic_fp16() -> Self {
        Self::new("SA", 16, 16, 32, 1.0).expect("static preset")
    }

    /// Adaptive 4-bit datatype accelerator; slightly deeper fill.
    pub fn ant() -> Self {
        Self::new("ANT", 4, 8, 33, 1.0).expect("static preset")
    }

    /// FP-INT multiplier accelerator; deeper fill again.
    pub fn figna() -> Self {
        Self::new("FIGNA", 4, 16, 34, 1.0).expect("static preset")
    }

    /// LUT-based FP-INT accelerator. The multiplier is chosen so that batch-1
    /// utilization on a 4096x4096 layer lands near 4.3%.
    pub fn figlut() -> Self {
        Self::new("FIGLUT", 4, 16, 32, 1.43).expect("static preset")
    }

    /// The PE array in INT8 mode.
    pub fn int8_mode() -> Self {
        Self::new("EVA-A8W8", 8, 8, 32, 1.0).expect("static preset")
    }

    pub fn presets() -> Vec<Self> {
        vec![
            Self::systolic_fp16(),
            Self::ant(),
            Self::figna(),
            Self::figlut(),
            Self::int8_mode(),
        ]
    }

    fn uses_fp16_macs(&self) -> bool {
        self.weight_bits == 16 || self.act_bits == 16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WsCycles {
    pub compute: u64,
    pub memory: u64,
    pub weight_bytes: u64,
    pub activation_bytes: u64,
}

impl WsCycles {
    pub fn latency(&self) -> u64 {
        self.compute.max(self.memory)
    }
}

/// Cycle model of one `K x N` layer applied to `M` rows.
///
/// `compute = ceil(K/r) * ceil(N/c) * (M + m_tiles * fill) / multiplier`, with
/// `m_tiles = ceil(M / tiling.m)`. Weights are re-streamed once per `m` tile and
/// activations once per `n` tile; when `count_activations` is set memory time
/// covers the larger of the two streams, otherwise weights only.
pub fn weight_stationary_cycles(
    spec: &BaselineSpec,
    arch: &ArchSpec,
    layer: &LayerShape,
    count_activations: bool,
) -> Result<WsCycles> {
    arch.validate()?;
    spec.validate()?;
    let (rows, cols) = arch.int8_array;
    let tiles = layer.k.div_ceil(rows) as u64 * layer.n.div_ceil(cols) as u64;
    let m = layer.m as u64;
    let m_tiles = layer.m.div_ceil(arch.prefill_tiling.m) as u64;
    let n_tiles = layer.n.div_ceil(arch.prefill_tiling.n) as u64;

    let raw = tiles * (m + m_tiles * spec.tile_fill_cycles);
    let compute = (raw as f64 / spec.throughput_multiplier).ceil() as u64;

    let weight_bits = layer.k as u64 * layer.n as u64 * spec.weight_bits as u64 * m_tiles;
    let act_bits = m * layer.k as u64 * spec.act_bits as u64 * n_tiles;
    let weight_bytes = weight_bits.div_ceil(8);
    let activation_bytes = act_bits.div_ceil(8);
    let streamed = if count_activations {
        weight_bytes.max(activation_bytes)
    } else {
        weight_bytes
    };
    let memory = (streamed as f64 / arch.dram_bytes_per_cycle).ceil() as u64;
    Ok(WsCycles {
        compute,
        memory,
        weight_bytes,
        activation_bytes,
    })
}

/// Decode of `batch` tokens on a weight-stationary baseline.
pub fn baseline_decode_latency(
    spec: &BaselineSpec,
    layer: &LayerShape,
    batch: usize,
    arch: &ArchSpec,
) -> Result<u64> {
    if batch == 0 {
        return Err(Error::config("batch must be at least 1"));
    }
    let shape = layer.with_tokens(batch);
    Ok(weight_stationary_cycles(spec, arch, &shape, arch.baseline_activation_traffic)?.latency())
}

/// Prefill of `layer.m` tokens on the INT8 array.
pub fn prefill_latency(arch: &ArchSpec, layer: &LayerShape) -> Result<u64> {
    baseline_prefill_latency(&BaselineSpec::int8_mode(), arch, layer)
}

pub fn baseline_prefill_latency(spec: &BaselineSpec, arch: &ArchSpec, layer: &LayerShape) -> Result<u64> {
    Ok(weight_stationary_cycles(spec, arch, layer, true)?.latency())
}

/// Useful MACs over peak MACs of a `macs_per_cycle` array for `latency` cycles.
pub fn decode_utilization(layer: &LayerShape, batch: usize, latency: u64, macs_per_cycle: u64) -> f64 {
    (layer.k as f64 * layer.n as f64 * batch as f64) / (macs_per_cycle as f64 * latency as f64)
}

/// Event counts for a weight-stationary run of `layer` (with `layer.m` rows).
pub fn baseline_counters(
    spec: &BaselineSpec,
    arch: &ArchSpec,
    layer: &LayerShape,
    count_activations: bool,
) -> Result<EventCounters> {
    let ws = weight_stationary_cycles(spec, arch, layer, count_activations)?;
    let macs = layer.k as u64 * layer.n as u64 * layer.m as u64;
    let (int8_macs, fp16_macs) = if spec.uses_fp16_macs() { (0, macs) } else { (macs, 0) };
    let dram_bytes = if count_activations {
        ws.weight_bytes + ws.activation_bytes
    } else {
        ws.weight_bytes
    };
    let output_bytes = (layer.m as u64 * layer.n as u64 * spec.act_bits as u64).div_ceil(8);
    Ok(EventCounters {
        dram_bytes,
        // Weights land in the weight buffer once, activations are read once
        // per weight tile column and outputs written once.
        sram_bytes: ws.weight_bytes + ws.activation_bytes + output_bytes,
        int8_macs,
        fp16_macs,
        eu_adds: 0,
        cycles: ws.latency(),
        eu_cycles: 0,
    })
}

/// Counters for prefill on the INT8 array.
pub fn prefill_counters(arch: &ArchSpec, layer: &LayerShape) -> Result<EventCounters> {
    baseline_counters(&BaselineSpec::int8_mode(), arch, layer, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: usize = 4096;

    #[test]
    fn systolic_decode_example() {
        let layer = LayerShape::decode(K, K);
        let lat = baseline_decode_latency(&BaselineSpec::systolic_fp16(), &layer, 1, &ArchSpec::default()).unwrap();
        assert_eq!(lat, 16384 * 33);
    }

    #[test]
    fn prefill_examples() {
        let arch = ArchSpec::default();
        let p1 = prefill_latency(&arch, &LayerShape::new(K, K, 1).unwrap()).unwrap();
        let d1 = baseline_decode_latency(&BaselineSpec::int8_mode(), &LayerShape::decode(K, K), 1, &arch).unwrap();
        assert_eq!(p1, d1);
        let ws = weight_stationary_cycles(
            &BaselineSpec::int8_mode(),
            &arch,
            &LayerShape::new(K, K, 1024).unwrap(),
            true,
        )
        .unwrap();
        assert_eq!(ws.compute, 16384 * (1024 + 32));
    }

    #[test]
    fn large_batch_approaches_full_utilization() {
        let arch = ArchSpec::default();
        let layer = LayerShape::decode(K, K);
        let spec = BaselineSpec::int8_mode();
        let u1 = decode_utilization(&layer, 1, baseline_decode_latency(&spec, &layer, 1, &arch).unwrap(), 1024);
        let b = 1 << 16;
        let ub = decode_utilization(&layer, b, baseline_decode_latency(&spec, &layer, b, &arch).unwrap(), 1024);
        assert!(u1 < 0.04);
        assert!(ub > 0.96, "{ub}");
    }

    #[test]
    fn figlut_batch_one_utilization_is_low() {
        let arch = ArchSpec::default();
        let layer = LayerShape::decode(K, K);
        let lat = baseline_decode_latency(&BaselineSpec::figlut(), &layer, 1, &arch).unwrap();
        let u = decode_utilization(&layer, 1, lat, 1024);
        assert!((u - 0.0434).abs() < 0.002, "{u}");
    }

    #[test]
    fn preset_validation() {
        assert!(BaselineSpec::new("x", 5, 8, 32, 1.0).is_err());
        assert!(BaselineSpec::new("x", 4, 8, 32, 0.0).is_err());
        assert_eq!(BaselineSpec::presets().len(), 5);
    }
}
