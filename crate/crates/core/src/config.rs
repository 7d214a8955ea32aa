//! JSON run configuration.
//!
//! Every section and key is optional; omitted values take the defaults of
//! the reference architecture. Unknown keys are rejected and errors name the
//! offending key path.
//!
//! ```json
//! {
//!   "arch": { "epilogue_units": 4, "dram_bandwidth_gbps": 64.0 },
//!   "vq": { "d": 8, "n": 8, "c": 2, "n_share": 4096 },
//!   "layer": { "k": 4096, "n": 4096 },
//!   "energy": { "dram_pj_per_byte": 80.0 },
//!   "study": { "eu_range": [1, 16], "batches": [1, 2, 4, 8, 16, 32, 64] }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfsim::{ArchSpec, BufferSizes, EnergyParams, GemmTiling, LayerShape};
use crate::studies::{Dataset, E2eMode};
use crate::vqcore::VqConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferKb {
    pub weight_codebook: u64,
    pub weight: u64,
    pub input: u64,
    pub output_codebook: u64,
    pub output: u64,
}

impl Default for BufferKb {
    fn default() -> Self {
        let b = BufferSizes::default();
        Self {
            weight_codebook: b.weight_codebook / 1024,
            weight: b.weight / 1024,
            input: b.input / 1024,
            output_codebook: b.output_codebook / 1024,
            output: b.output / 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub pe_array_int8: [usize; 2],
    pub pe_array_fp16: [usize; 2],
    pub epilogue_units: usize,
    pub adder_tree_inputs: usize,
    pub frequency_mhz: f64,
    pub dram_bandwidth_gbps: f64,
    pub buffer_kb: BufferKb,
    pub fill_cycles: u64,
    pub int8_fill_cycles: u64,
    pub prefill_tiling: GemmTiling,
    pub baseline_activation_traffic: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let a = ArchSpec::default();
        Self {
            pe_array_int8: [a.int8_array.0, a.int8_array.1],
            pe_array_fp16: [a.fp16_array.0, a.fp16_array.1],
            epilogue_units: a.num_eus,
            adder_tree_inputs: a.eu_width,
            frequency_mhz: a.frequency_hz / 1e6,
            dram_bandwidth_gbps: a.dram_bytes_per_cycle * a.frequency_hz / 1e9,
            buffer_kb: BufferKb::default(),
            fill_cycles: a.fill_cycles,
            int8_fill_cycles: a.int8_fill_cycles,
            prefill_tiling: a.prefill_tiling,
            baseline_activation_traffic: a.baseline_activation_traffic,
        }
    }
}

impl ArchConfig {
    pub fn to_arch(&self) -> Result<ArchSpec> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("arch.{key} must be positive")))
            } else {
                Ok(())
            }
        };
        positive("pe_array_int8", self.pe_array_int8[0].min(self.pe_array_int8[1]))?;
        positive("pe_array_fp16", self.pe_array_fp16[0].min(self.pe_array_fp16[1]))?;
        positive("epilogue_units", self.epilogue_units)?;
        positive("adder_tree_inputs", self.adder_tree_inputs)?;
        let t = self.prefill_tiling;
        positive("prefill_tiling", t.m.min(t.k).min(t.n))?;
        for (key, v) in [
            ("frequency_mhz", self.frequency_mhz),
            ("dram_bandwidth_gbps", self.dram_bandwidth_gbps),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::config(format!("arch.{key} must be positive and finite")));
            }
        }
        let kb = self.buffer_kb;
        let hz = self.frequency_mhz * 1e6;
        let arch = ArchSpec {
            int8_array: (self.pe_array_int8[0], self.pe_array_int8[1]),
            fp16_array: (self.pe_array_fp16[0], self.pe_array_fp16[1]),
            num_eus: self.epilogue_units,
            eu_width: self.adder_tree_inputs,
            frequency_hz: hz,
            dram_bytes_per_cycle: self.dram_bandwidth_gbps * 1e9 / hz,
            buffers: BufferSizes {
                weight_codebook: kb.weight_codebook * 1024,
                weight: kb.weight * 1024,
                input: kb.input * 1024,
                output_codebook: kb.output_codebook * 1024,
                output: kb.output * 1024,
            },
            fill_cycles: self.fill_cycles,
            int8_fill_cycles: self.int8_fill_cycles,
            prefill_tiling: self.prefill_tiling,
            baseline_activation_traffic: self.baseline_activation_traffic,
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub eu_range: [usize; 2],
    pub batches: Vec<usize>,
    pub max_batch: usize,
    pub dataset: String,
    pub requests: usize,
    pub e2e_mode: E2eMode,
    pub attention_cost_per_token: u64,
    pub conflict_rows: usize,
    pub conflict_cols: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            eu_range: [1, 16],
            batches: vec![1, 2, 4, 8, 16, 32, 64, 128],
            max_batch: 256,
            dataset: "dolly".into(),
            requests: 1000,
            e2e_mode: E2eMode::MeanLength,
            attention_cost_per_token: 0,
            conflict_rows: 512,
            conflict_cols: 4096,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.eu_range;
        if lo == 0 || lo > hi {
            return Err(Error::config("study.eu_range must be [lo, hi] with 1 <= lo <= hi"));
        }
        if self.batches.is_empty()
            || self.batches[0] == 0
            || self.batches.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::config("study.batches must be strictly ascending and >= 1"));
        }
        if self.max_batch == 0 {
            return Err(Error::config("study.max_batch must be at least 1"));
        }
        if self.requests == 0 {
            return Err(Error::config("study.requests must be at least 1"));
        }
        if self.conflict_rows == 0 || self.conflict_cols == 0 {
            return Err(Error::config("study.conflict_rows and study.conflict_cols must be positive"));
        }
        self.dataset
            .parse::<Dataset>()
            .map_err(|_| Error::config(format!("study.dataset `{}` is not dolly, arxiv or gsm8k", self.dataset)))?;
        Ok(())
    }

    pub fn dataset(&self) -> Result<Dataset> {
        self.dataset.parse()
    }

    pub fn eu_values(&self) -> Vec<usize> {
        (self.eu_range[0]..=self.eu_range[1]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub arch: ArchConfig,
    pub vq: VqConfig,
    pub layer: LayerShape,
    pub energy: EnergyParams,
    pub study: StudyConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            vq: VqConfig::new(8, 8, 2, 4096).expect("static config"),
            layer: LayerShape::decode(4096, 4096),
            energy: EnergyParams::default(),
            study: StudyConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.to_arch()?;
        if self.layer.k == 0 || self.layer.n == 0 || self.layer.m == 0 {
            return Err(Error::config("layer.k, layer.n and layer.m must be positive"));
        }
        self.energy.validate()?;
        self.study.validate()
    }

    pub fn arch_spec(&self) -> Result<ArchSpec> {
        self.arch.to_arch()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg = SimConfig::from_json("{}").unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert_eq!(cfg.arch_spec().unwrap(), ArchSpec::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = SimConfig::from_json(r#"{"arch": {"epilogue_unitz": 4}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("arch") && msg.contains("epilogue_unitz"), "{msg}");
    }

    #[test]
    fn invalid_value_is_named() {
        let err = SimConfig::from_json(r#"{"arch": {"epilogue_units": 0}}"#).unwrap_err();
        assert!(err.to_string().contains("arch.epilogue_units"), "{err}");
        let err = SimConfig::from_json(r#"{"vq": {"d": 8, "n": 20, "c": 1, "n_share": 4}}"#).unwrap_err();
        assert!(err.to_string().contains("vq"), "{err}");
    }

    #[test]
    fn doubled_bandwidth() {
        let cfg = SimConfig::from_json(r#"{"arch": {"dram_bandwidth_gbps": 128.0}}"#).unwrap();
        assert_eq!(cfg.arch_spec().unwrap().dram_bytes_per_cycle, 256.0);
    }
}
