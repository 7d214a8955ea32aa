use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::RequestTrace;
use super::{percentile, StudyResult};
use crate::error::{Error, Result};
use crate::perfsim::{
    baseline_counters, baseline_decode_latency, baseline_prefill_latency, decode_counters,
    decode_stage_cycles, prefill_latency, ArchSpec, BaselineSpec, EventCounters, LayerShape,
};
use crate::vqcore::VqConfig;

/// An architecture that can run decode and prefill.
#[derive(Debug, Clone, PartialEq)]
pub enum Accelerator {
    /// VQ decode through the output codebook; prefill picks the faster of
    /// the VQ path and the INT8 array.
    Vq { name: String, config: VqConfig },
    WeightStationary(BaselineSpec),
}

impl Accelerator {
    pub fn vq(name: impl Into<String>, config: VqConfig) -> Self {
        Accelerator::Vq {
            name: name.into(),
            config,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Accelerator::Vq { name, .. } => name,
            Accelerator::WeightStationary(spec) => &spec.name,
        }
    }

    /// EVA at 2, 3 and 4 bits followed by the weight-stationary presets.
    pub fn presets() -> Vec<Accelerator> {
        let aqlm = |c| VqConfig::new(8, 8, c, 4096).expect("static config");
        let mut all = vec![
            Accelerator::vq("EVA-W2", aqlm(2)),
            Accelerator::vq("EVA-W3", aqlm(3)),
            Accelerator::vq("EVA-W4", aqlm(4)),
        ];
        all.extend(BaselineSpec::presets().into_iter().map(Accelerator::WeightStationary));
        all
    }

    pub fn layer_decode_cycles(&self, arch: &ArchSpec, layer: &LayerShape, batch: usize) -> Result<u64> {
        match self {
            Accelerator::Vq { config, .. } => Ok(decode_stage_cycles(arch, config, layer, batch)?.latency()),
            Accelerator::WeightStationary(spec) => baseline_decode_latency(spec, layer, batch, arch),
        }
    }

    pub fn layer_decode_counters(
        &self,
        arch: &ArchSpec,
        layer: &LayerShape,
        batch: usize,
    ) -> Result<EventCounters> {
        match self {
            Accelerator::Vq { config, .. } => decode_counters(arch, config, layer, batch),
            Accelerator::WeightStationary(spec) => baseline_counters(
                spec,
                arch,
                &layer.with_tokens(batch),
                arch.baseline_activation_traffic,
            ),
        }
    }

    /// Prefill of `tokens` input tokens through one layer.
    pub fn layer_prefill_cycles(&self, arch: &ArchSpec, layer: &LayerShape, tokens: usize) -> Result<u64> {
        let shape = layer.with_tokens(tokens);
        match self {
            Accelerator::Vq { config, .. } => {
                let vq = decode_stage_cycles(arch, config, layer, tokens)?.latency();
                Ok(vq.min(prefill_latency(arch, &shape)?))
            }
            Accelerator::WeightStationary(spec) => baseline_prefill_latency(spec, arch, &shape),
        }
    }
}

/// Dense layers of one transformer block, repeated `blocks` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerShape>,
    pub blocks: usize,
    /// Attention and special-function cycles per token per block.
    #[serde(default)]
    pub attention_cost_per_token: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("model.layers must not be empty"));
        }
        if self.blocks == 0 {
            return Err(Error::config("model.blocks must be at least 1"));
        }
        if self.layers.iter().any(|l| l.k == 0 || l.n == 0) {
            return Err(Error::config("model.layers entries need k, n >= 1"));
        }
        Ok(())
    }

    /// First block of LLaMA-2-7B: Q, K, V, O projections, gate and up, down.
    pub fn llama2_7b() -> Self {
        let (h, f) = (4096, 11008);
        let mut layers = vec![LayerShape::decode(h, h); 4];
        layers.push(LayerShape::decode(h, f));
        layers.push(LayerShape::decode(h, f));
        layers.push(LayerShape::decode(f, h));
        Self {
            name: "llama2-7b".into(),
            layers,
            blocks: 1,
            attention_cost_per_token: 0,
        }
    }

    fn decode_token_cycles(&self, acc: &Accelerator, arch: &ArchSpec) -> Result<u64> {
        let mut per_block = self.attention_cost_per_token;
        for layer in &self.layers {
            per_block += acc.layer_decode_cycles(arch, layer, 1)?;
        }
        Ok(per_block * self.blocks as u64)
    }

    fn prefill_cycles(&self, acc: &Accelerator, arch: &ArchSpec, tokens: usize) -> Result<u64> {
        let mut per_block = self.attention_cost_per_token * tokens as u64;
        for layer in &self.layers {
            per_block += acc.layer_prefill_cycles(arch, layer, tokens)?;
        }
        Ok(per_block * self.blocks as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum E2eMode {
    /// One request of mean input and output length, scaled by the count.
    #[default]
    MeanLength,
    /// Every request simulated; percentiles of per-request latency.
    PerRequest,
}

impl E2eMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            E2eMode::MeanLength => "mean_length",
            E2eMode::PerRequest => "per_request",
        }
    }
}

pub const E2E_COLUMNS: &[&str] = &[
    "study",
    "architecture",
    "mode",
    "requests",
    "mean_input",
    "mean_output",
    "decode_cycles_per_token",
    "prefill_cycles",
    "decode_cycles",
    "total_cycles",
    "total_seconds",
    "decode_share",
    "p50_cycles",
    "p90_cycles",
    "p99_cycles",
];

/// Totals are summed over every request of the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct E2eRow {
    pub study: &'static str,
    pub architecture: String,
    pub mode: &'static str,
    pub requests: usize,
    pub mean_input: f64,
    pub mean_output: f64,
    pub decode_cycles_per_token: u64,
    pub prefill_cycles: f64,
    pub decode_cycles: f64,
    pub total_cycles: f64,
    pub total_seconds: f64,
    pub decode_share: f64,
    /// Per-request latency percentiles; empty in mean-length mode.
    pub p50_cycles: Option<f64>,
    pub p90_cycles: Option<f64>,
    pub p99_cycles: Option<f64>,
}

pub fn run_e2e(
    trace: &RequestTrace,
    model: &ModelSpec,
    arch: &ArchSpec,
    accelerators: &[Accelerator],
    mode: E2eMode,
) -> Result<StudyResult<E2eRow>> {
    model.validate()?;
    arch.validate()?;
    if trace.is_empty() {
        return Err(Error::config("trace has no requests"));
    }
    let summary = trace.summary();
    let count = trace.len() as f64;
    let mut rows = Vec::with_capacity(accelerators.len());
    for acc in accelerators {
        let per_token = model.decode_token_cycles(acc, arch)?;
        let (prefill, decode, pct) = match mode {
            E2eMode::MeanLength => {
                let tokens = (summary.mean_input.round() as usize).max(1);
                let prefill = model.prefill_cycles(acc, arch, tokens)? as f64 * count;
                let decode = per_token as f64 * summary.mean_output * count;
                (prefill, decode, None)
            }
            E2eMode::PerRequest => {
                let mut cache = BTreeMap::new();
                let mut prefill = 0u64;
                let mut decode = 0u64;
                let mut totals = Vec::with_capacity(trace.len());
                for r in trace.requests() {
                    let p = match cache.get(&r.input_len) {
                        Some(&p) => p,
                        None => {
                            let p = model.prefill_cycles(acc, arch, r.input_len)?;
                            cache.insert(r.input_len, p);
                            p
                        }
                    };
                    let d = per_token * r.output_len as u64;
                    prefill += p;
                    decode += d;
                    totals.push((p + d) as f64);
                }
                totals.sort_by(f64::total_cmp);
                let pct = [50.0, 90.0, 99.0].map(|q| percentile(&totals, q));
                (prefill as f64, decode as f64, Some(pct))
            }
        };
        let total = prefill + decode;
        rows.push(E2eRow {
            study: "e2e",
            architecture: acc.name().to_string(),
            mode: mode.as_str(),
            requests: trace.len(),
            mean_input: summary.mean_input,
            mean_output: summary.mean_output,
            decode_cycles_per_token: per_token,
            prefill_cycles: prefill,
            decode_cycles: decode,
            total_cycles: total,
            total_seconds: total / arch.frequency_hz,
            decode_share: if total > 0.0 { decode / total } else { 0.0 },
            p50_cycles: pct.map(|p| p[0]),
            p90_cycles: pct.map(|p| p[1]),
            p99_cycles: pct.map(|p| p[2]),
        });
    }
    Ok(StudyResult::new("e2e", rows))
}
