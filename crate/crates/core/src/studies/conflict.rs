//! Codebook lookup throughput of conventional VQ dequantization against
//! output-codebook lookup in the epilogue.
//!
//! Conventional methods fetch one `d`-element centroid per index from a
//! banked weight-codebook buffer, `lookups_per_cycle` at a time. EVA variants
//! build an output codebook per tile of `width` index rows on the FP16 array
//! (`2^n` cycles) while `units` adder trees consume the tile's indices, one
//! column per tree per cycle, from row-dedicated banks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::StudyResult;
use crate::error::{Error, Result};
use crate::memsys::{
    eva_conflict_free_stats, hot_cold_replicate, trace_indices, BankMapping, BankedBuffer,
    ScheduleStats,
};
use crate::vqcore::IndexMatrix;

/// Epilogue geometry: `units` adder trees of `width` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvaEpilogue {
    pub width: usize,
    pub units: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ConflictMethod {
    Conflicted,
    /// Hottest entries replicated until they cover this share of accesses.
    Replicated { coverage: f64 },
    ConflictFree,
    Eva(EvaEpilogue),
}

impl ConflictMethod {
    pub fn label(&self) -> String {
        match self {
            ConflictMethod::Conflicted => "vq_conflict".into(),
            ConflictMethod::Replicated { .. } => "vq_hot_cold".into(),
            ConflictMethod::ConflictFree => "vq_conflict_free".into(),
            ConflictMethod::Eva(e) => format!("eva_eu{}x{}", e.width, e.units),
        }
    }

    /// The six methods compared in the conflict-mitigation table.
    pub fn table() -> Vec<ConflictMethod> {
        vec![
            ConflictMethod::Conflicted,
            ConflictMethod::Replicated { coverage: 0.5 },
            ConflictMethod::ConflictFree,
            ConflictMethod::Eva(EvaEpilogue { width: 4, units: 1 }),
            ConflictMethod::Eva(EvaEpilogue { width: 32, units: 1 }),
            ConflictMethod::Eva(EvaEpilogue { width: 32, units: 4 }),
        ]
    }
}

/// One index matrix (a single codebook) and the conventional buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictWorkload {
    pub indices: IndexMatrix,
    pub buffer: BankedBuffer,
    pub lookups_per_cycle: usize,
    pub fill_cycles: u64,
}

impl ConflictWorkload {
    /// `rows x cols` uniform random indices of `bits` bits on 4 single-ported
    /// banks with 4 centroid lookups per cycle.
    pub fn uniform(rows: usize, cols: usize, bits: u32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = 1u32 << bits;
        let data = (0..rows * cols).map(|_| rng.random_range(0..size) as u16).collect();
        Ok(Self {
            indices: IndexMatrix::new(rows, cols, bits, data)?,
            buffer: BankedBuffer::new(4, 16)?,
            lookups_per_cycle: 4,
            fill_cycles: 38,
        })
    }
}

pub const CONFLICT_COLUMNS: &[&str] = &[
    "study",
    "method",
    "banks",
    "ports",
    "lookups_per_cycle",
    "replicated_entries",
    "cycles",
    "conflict_cycles",
    "slowdown",
    "speedup",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConflictRow {
    pub study: &'static str,
    pub method: String,
    pub banks: usize,
    pub ports: usize,
    pub lookups_per_cycle: usize,
    pub replicated_entries: usize,
    pub cycles: u64,
    pub conflict_cycles: u64,
    /// Scheduled lookup cycles over conflict-free lookup cycles.
    pub slowdown: f64,
    /// Relative to the first method in the list.
    pub speedup: f64,
}

/// Fewest hottest entries whose accesses reach `coverage` of the total.
pub fn coverage_budget(frequencies: &[u64], coverage: f64) -> usize {
    let total: u64 = frequencies.iter().sum();
    if total == 0 || coverage <= 0.0 {
        return 0;
    }
    let mut sorted = frequencies.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let target = coverage.min(1.0) * total as f64;
    let mut acc = 0u64;
    for (i, f) in sorted.iter().enumerate() {
        acc += f;
        if acc as f64 >= target {
            return i + 1;
        }
    }
    sorted.len()
}

pub fn conflict_study(
    workload: &ConflictWorkload,
    methods: &[ConflictMethod],
) -> Result<StudyResult<ConflictRow>> {
    if methods.is_empty() {
        return Err(Error::config("conflict study needs at least one method"));
    }
    let w = workload;
    let idx = &w.indices;
    let mut rows: Vec<ConflictRow> = Vec::with_capacity(methods.len());
    for method in methods {
        let (stats, banks, ports, lookups, replicated, cycles) = match *method {
            ConflictMethod::Conflicted | ConflictMethod::Replicated { .. } | ConflictMethod::ConflictFree => {
                let (mapping, replicated) = match *method {
                    ConflictMethod::Replicated { coverage } => {
                        let hist = idx.histogram();
                        let budget = coverage_budget(&hist, coverage);
                        (hot_cold_replicate(&hist, budget), budget)
                    }
                    _ => (BankMapping::IndexMod, 0),
                };
                let mut stats = trace_indices(idx, w.lookups_per_cycle, &w.buffer, &mapping)?;
                if *method == ConflictMethod::ConflictFree {
                    stats = ScheduleStats {
                        batches: stats.batches,
                        cycles: stats.batches,
                        conflict_cycles: 0,
                    };
                }
                let cycles = stats.cycles + w.fill_cycles;
                (stats, w.buffer.num_banks, w.buffer.ports_per_bank, w.lookups_per_cycle, replicated, cycles)
            }
            ConflictMethod::Eva(e) => {
                if e.width == 0 || e.units == 0 {
                    return Err(Error::config("epilogue width and unit count must be positive"));
                }
                let buffer = BankedBuffer::new(e.width, 2)?;
                let stats = eva_conflict_free_stats(idx, e.width, &buffer)?;
                let tiles = idx.rows().div_ceil(e.width) as u64;
                let per_tile_lookup = (idx.cols() as u64).div_ceil(e.units as u64) * stats.cycles
                    / stats.batches.max(1);
                let build = 1u64 << idx.bits();
                let cycles = tiles * build.max(per_tile_lookup) + w.fill_cycles;
                (stats, e.width, 1, e.width * e.units, 0, cycles)
            }
        };
        let speedup = rows.first().map_or(1.0, |base| base.cycles as f64 / cycles as f64);
        rows.push(ConflictRow {
            study: "conflict",
            method: method.label(),
            banks,
            ports,
            lookups_per_cycle: lookups,
            replicated_entries: replicated,
            cycles,
            conflict_cycles: stats.conflict_cycles,
            slowdown: stats.slowdown(),
            speedup,
        });
    }
    Ok(StudyResult::new("conflict", rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_covers_requested_share() {
        assert_eq!(coverage_budget(&[5, 1, 3, 1], 0.5), 1);
        assert_eq!(coverage_budget(&[5, 1, 3, 1], 0.6), 2);
        assert_eq!(coverage_budget(&[5, 1, 3, 1], 1.0), 4);
        assert_eq!(coverage_budget(&[0, 0], 0.5), 0);
    }

    #[test]
    fn table_ordering_and_eva_scaling() {
        let w = ConflictWorkload::uniform(512, 1024, 8, 11).unwrap();
        let res = conflict_study(&w, &ConflictMethod::table()).unwrap();
        let s: Vec<f64> = res.rows.iter().map(|r| r.speedup).collect();
        assert_eq!(s[0], 1.0);
        assert!(s.windows(2).all(|p| p[0] <= p[1]), "{s:?}");
        for r in &res.rows[3..] {
            assert_eq!(r.conflict_cycles, 0);
            assert_eq!(r.slowdown, 1.0);
        }
        let ratio = s[5] / s[4];
        assert!((3.4..=4.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn full_replication_equals_conflict_free() {
        let w = ConflictWorkload::uniform(64, 64, 6, 5).unwrap();
        let res = conflict_study(
            &w,
            &[ConflictMethod::Replicated { coverage: 1.0 }, ConflictMethod::ConflictFree],
        )
        .unwrap();
        assert_eq!(res.rows[0].cycles, res.rows[1].cycles);
    }
}
