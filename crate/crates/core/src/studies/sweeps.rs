use serde::Serialize;

use super::e2e::Accelerator;
use super::StudyResult;
use crate::error::{Error, Result};
use crate::perfsim::{
    batch_crossover, decode_counters, decode_stage_cycles, energy, eu_saturation_point, ArchSpec,
    BaselineSpec, EnergyParams, LayerShape,
};
use crate::vqcore::VqConfig;

pub const EU_SWEEP_COLUMNS: &[&str] = &[
    "study",
    "num_eus",
    "latency_cycles",
    "energy_j",
    "dram_j",
    "sram_j",
    "pe_j",
    "eu_j",
    "gemm_cycles",
    "epilogue_cycles",
    "memory_cycles",
    "dominant",
    "saturation_eus",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EuSweepRow {
    pub study: &'static str,
    pub num_eus: usize,
    pub latency_cycles: u64,
    pub energy_j: f64,
    pub dram_j: f64,
    pub sram_j: f64,
    pub pe_j: f64,
    pub eu_j: f64,
    pub gemm_cycles: u64,
    pub epilogue_cycles: u64,
    pub memory_cycles: u64,
    pub dominant: &'static str,
    pub saturation_eus: usize,
}

/// Decode latency and energy of one layer for each EU count in `eu_range`.
pub fn dse_eu_sweep(
    arch: &ArchSpec,
    cfg: &VqConfig,
    layer: &LayerShape,
    eu_range: &[usize],
    params: &EnergyParams,
) -> Result<StudyResult<EuSweepRow>> {
    if eu_range.is_empty() {
        return Err(Error::config("EU sweep range is empty"));
    }
    let mut eus = eu_range.to_vec();
    eus.sort_unstable();
    eus.dedup();
    let saturation = eu_saturation_point(arch, cfg, layer);

    let rows = eus
        .into_iter()
        .map(|e| {
            let a = arch.with_eus(e);
            let stages = decode_stage_cycles(&a, cfg, layer, 1)?;
            let en = energy(&decode_counters(&a, cfg, layer, 1)?, params);
            Ok(EuSweepRow {
                study: "dse_eu",
                num_eus: e,
                latency_cycles: stages.latency(),
                energy_j: en.total(),
                dram_j: en.dram,
                sram_j: en.sram,
                pe_j: en.pe,
                eu_j: en.eu,
                gemm_cycles: stages.gemm,
                epilogue_cycles: stages.epilogue,
                memory_cycles: stages.memory,
                dominant: stages.dominant().as_str(),
                saturation_eus: saturation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult::new("dse_eu", rows))
}

pub const BATCH_SWEEP_COLUMNS: &[&str] = &[
    "study",
    "architecture",
    "batch",
    "latency_cycles",
    "cycles_per_token",
    "energy_j",
    "utilization",
    "crossover_batch",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSweepRow {
    pub study: &'static str,
    pub architecture: String,
    pub batch: usize,
    pub latency_cycles: u64,
    pub cycles_per_token: f64,
    pub energy_j: f64,
    /// Useful MACs over peak INT8-array MACs.
    pub utilization: f64,
    /// First batch at which this VQ series is slower than the INT8 mode
    /// (empty for non-VQ series or when no crossover occurs up to `max_batch`).
    pub crossover_batch: Option<usize>,
}

/// A batch series to sweep.
pub type BatchSweepSeries = Accelerator;

/// Per-layer decode latency over `batches` for each architecture.
pub fn batch_sweep(
    arch: &ArchSpec,
    layer: &LayerShape,
    series: &[BatchSweepSeries],
    batches: &[usize],
    params: &EnergyParams,
    max_batch: usize,
) -> Result<StudyResult<BatchSweepRow>> {
    if batches.is_empty() {
        return Err(Error::config("batch range is empty"));
    }
    if batches.windows(2).any(|w| w[0] >= w[1]) || batches[0] == 0 {
        return Err(Error::config("batch range must be strictly ascending and start at >= 1"));
    }
    let int8 = BaselineSpec::int8_mode();
    let mut rows = Vec::with_capacity(series.len() * batches.len());
    for acc in series {
        let crossover = match acc {
            Accelerator::Vq { config, .. } => batch_crossover(arch, layer, config, &int8, max_batch)?,
            Accelerator::WeightStationary(_) => None,
        };
        for &b in batches {
            let latency = acc.layer_decode_cycles(arch, layer, b)?;
            let counters = acc.layer_decode_counters(arch, layer, b)?;
            rows.push(BatchSweepRow {
                study: "batch",
                architecture: acc.name().to_string(),
                batch: b,
                latency_cycles: latency,
                cycles_per_token: latency as f64 / b as f64,
                energy_j: energy(&counters, params).total(),
                utilization: crate::perfsim::decode_utilization(layer, b, latency, 1024),
                crossover_batch: crossover,
            });
        }
    }
    Ok(StudyResult::new("batch", rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w2() -> VqConfig {
        VqConfig::new(8, 8, 2, 4096).unwrap()
    }

    #[test]
    fn eu_sweep_flat_from_saturation() {
        let layer = LayerShape::decode(4096, 4096);
        let res = dse_eu_sweep(
            &ArchSpec::default(),
            &w2(),
            &layer,
            &(1..=16).collect::<Vec<_>>(),
            &EnergyParams::default(),
        )
        .unwrap();
        let lat: Vec<u64> = res.rows.iter().map(|r| r.latency_cycles).collect();
        assert!(lat.windows(2).all(|w| w[1] <= w[0]));
        assert!(lat[3..].iter().all(|&l| l == lat[3]));
        assert!(lat[2] > lat[3]);
        assert_eq!(res.rows[0].saturation_eus, 4);
    }

    #[test]
    fn single_point_sweep() {
        let layer = LayerShape::decode(4096, 4096);
        let res = dse_eu_sweep(&ArchSpec::default(), &w2(), &layer, &[1], &EnergyParams::default()).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert!(dse_eu_sweep(&ArchSpec::default(), &w2(), &layer, &[], &EnergyParams::default()).is_err());
    }

    #[test]
    fn batch_one_matches_stage_model() {
        let layer = LayerShape::decode(4096, 4096);
        let arch = ArchSpec::default();
        let series = vec![Accelerator::vq("EVA-W2", w2())];
        let res = batch_sweep(&arch, &layer, &series, &[1, 2, 4], &EnergyParams::default(), 128).unwrap();
        let direct = decode_stage_cycles(&arch, &w2(), &layer, 1).unwrap().latency();
        assert_eq!(res.rows[0].latency_cycles, direct);
        assert_eq!(res.rows[0].crossover_batch, Some(32));
        assert!(batch_sweep(&arch, &layer, &series, &[2, 1], &EnergyParams::default(), 8).is_err());
    }
}
