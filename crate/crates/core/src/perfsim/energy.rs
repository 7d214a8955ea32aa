use std::ops::Mul;

use serde::{Deserialize, Serialize};

use super::{decode_stage_cycles, ArchSpec, LayerShape};
use crate::error::{Error, Result};
use crate::vqcore::VqConfig;

/// Per-event energies in picojoules.
///
/// The defaults are synthetic placeholders chosen to be in a plausible range
/// for a 28 nm design with DDR4; they are not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyParams {
    pub dram_pj_per_byte: f64,
    pub sram_pj_per_byte: f64,
    pub mac_int8_pj: f64,
    pub mac_fp16_pj: f64,
    pub add_pj: f64,
    /// Leakage proxy per epilogue unit per cycle.
    pub eu_static_pj_per_cycle: f64,
    /// Leakage proxy for the rest of the core per cycle.
    pub core_static_pj_per_cycle: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            dram_pj_per_byte: 80.0,
            sram_pj_per_byte: 1.5,
            mac_int8_pj: 0.2,
            mac_fp16_pj: 1.1,
            add_pj: 0.4,
            eu_static_pj_per_cycle: 2.0,
            core_static_pj_per_cycle: 50.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("dram_pj_per_byte", self.dram_pj_per_byte),
            ("sram_pj_per_byte", self.sram_pj_per_byte),
            ("mac_int8_pj", self.mac_int8_pj),
            ("mac_fp16_pj", self.mac_fp16_pj),
            ("add_pj", self.add_pj),
            ("eu_static_pj_per_cycle", self.eu_static_pj_per_cycle),
            ("core_static_pj_per_cycle", self.core_static_pj_per_cycle),
        ];
        for (name, v) in fields {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::config(format!("energy.{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Event totals that energy is charged against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounters {
    pub dram_bytes: u64,
    pub sram_bytes: u64,
    pub int8_macs: u64,
    pub fp16_macs: u64,
    pub eu_adds: u64,
    /// Wall-clock cycles.
    pub cycles: u64,
    /// Epilogue-unit cycles (units x wall-clock cycles).
    pub eu_cycles: u64,
}

impl Mul<u64> for EventCounters {
    type Output = EventCounters;

    fn mul(self, k: u64) -> EventCounters {
        EventCounters {
            dram_bytes: self.dram_bytes * k,
            sram_bytes: self.sram_bytes * k,
            int8_macs: self.int8_macs * k,
            fp16_macs: self.fp16_macs * k,
            eu_adds: self.eu_adds * k,
            cycles: self.cycles * k,
            eu_cycles: self.eu_cycles * k,
        }
    }
}

impl std::ops::Add for EventCounters {
    type Output = EventCounters;

    fn add(self, o: EventCounters) -> EventCounters {
        EventCounters {
            dram_bytes: self.dram_bytes + o.dram_bytes,
            sram_bytes: self.sram_bytes + o.sram_bytes,
            int8_macs: self.int8_macs + o.int8_macs,
            fp16_macs: self.fp16_macs + o.fp16_macs,
            eu_adds: self.eu_adds + o.eu_adds,
            cycles: self.cycles + o.cycles,
            eu_cycles: self.eu_cycles + o.eu_cycles,
        }
    }
}

/// Energy in joules by component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub dram: f64,
    pub sram: f64,
    pub pe: f64,
    pub eu: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.dram + self.sram + self.pe + self.eu
    }

    pub fn dram_share(&self) -> f64 {
        let t = self.total();
        if t == 0.0 {
            0.0
        } else {
            self.dram / t
        }
    }
}

const PJ: f64 = 1e-12;

pub fn energy(counters: &EventCounters, params: &EnergyParams) -> EnergyBreakdown {
    let c = counters;
    EnergyBreakdown {
        dram: c.dram_bytes as f64 * params.dram_pj_per_byte * PJ,
        sram: c.sram_bytes as f64 * params.sram_pj_per_byte * PJ,
        pe: (c.int8_macs as f64 * params.mac_int8_pj
            + c.fp16_macs as f64 * params.mac_fp16_pj
            + c.cycles as f64 * params.core_static_pj_per_cycle)
            * PJ,
        eu: (c.eu_adds as f64 * params.add_pj + c.eu_cycles as f64 * params.eu_static_pj_per_cycle) * PJ,
    }
}

/// Counters for VQ decode of `batch` tokens through one layer.
///
/// DRAM carries the weight indices and codebooks only; activations stay on
/// chip between layers. Index and codebook traffic are shared by the batch.
pub fn decode_counters(
    arch: &ArchSpec,
    cfg: &VqConfig,
    layer: &LayerShape,
    batch: usize,
) -> Result<EventCounters> {
    let stages = decode_stage_cycles(arch, cfg, layer, batch)?;
    let b = batch as u64;
    let c = cfg.num_codebooks() as u64;
    let d = cfg.vector_dim() as u64;
    let size = cfg.codebook_size() as u64;
    let groups = cfg.num_groups(layer.n) as u64;
    let n = layer.n as u64;
    let padded_rows = stages.tiles * arch.eu_width as u64;

    let index_bytes = (padded_rows * n * c * cfg.index_bits() as u64).div_ceil(8);
    let codebook_bytes = groups * c * d * size * 2;
    let oc_entries = b * padded_rows * groups * c * size;
    let lookups = b * padded_rows * n * c;

    let sram_bytes = index_bytes
        + codebook_bytes * stages.tiles
        + oc_entries * 2 // output codebook writes
        + lookups * 2 // output codebook reads
        + b * layer.k as u64 * 2
        + b * n * 2;
    let latency = stages.latency();
    Ok(EventCounters {
        dram_bytes: index_bytes + codebook_bytes,
        sram_bytes,
        int8_macs: 0,
        fp16_macs: oc_entries * d,
        eu_adds: lookups,
        cycles: latency,
        eu_cycles: latency * arch.num_eus as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_traffic_zero_energy() {
        let e = energy(&EventCounters::default(), &EnergyParams::default());
        assert_eq!(e.total(), 0.0);
        assert_eq!(e.dram_share(), 0.0);
    }

    #[test]
    fn w2_vs_w4_dram_bytes_halve() {
        let arch = ArchSpec::default();
        let layer = LayerShape::decode(4096, 4096);
        let w2 = decode_counters(&arch, &VqConfig::new(8, 8, 2, 4096).unwrap(), &layer, 1).unwrap();
        let w4 = decode_counters(&arch, &VqConfig::new(8, 8, 4, 4096).unwrap(), &layer, 1).unwrap();
        assert_eq!(w2.dram_bytes * 2, w4.dram_bytes);
        let p = EnergyParams::default();
        assert_eq!(energy(&w2, &p).dram / energy(&w4, &p).dram, 0.5);
    }

    #[test]
    fn params_validation() {
        let p = EnergyParams {
            add_pj: -1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(EnergyParams::default().validate().is_ok());
    }
}
