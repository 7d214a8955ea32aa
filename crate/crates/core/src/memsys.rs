//! Banked-buffer access scheduling.
//!
//! Requests issued in the same logical cycle form an [`AccessBatch`]. A batch
//! takes as many cycles as its most loaded bank needs to drain through its
//! ports. Requests for replicated entries may be served by any bank.

use std::collections::HashSet;
use std::io::Write;

use crate::error::{Error, Result};
use crate::vqcore::IndexMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankedBuffer {
    pub num_banks: usize,
    pub ports_per_bank: usize,
    pub word_bytes: usize,
}

impl BankedBuffer {
    /// Single-ported banks.
    pub fn new(num_banks: usize, word_bytes: usize) -> Result<Self> {
        Self::with_ports(num_banks, 1, word_bytes)
    }

    pub fn with_ports(num_banks: usize, ports_per_bank: usize, word_bytes: usize) -> Result<Self> {
        if num_banks == 0 {
            return Err(Error::config("a banked buffer needs at least one bank"));
        }
        if ports_per_bank == 0 {
            return Err(Error::config("each bank needs at least one port"));
        }
        Ok(Self {
            num_banks,
            ports_per_bank,
            word_bytes,
        })
    }

    /// Reads the buffer can serve per cycle without conflicts.
    pub fn capacity(&self) -> usize {
        self.num_banks * self.ports_per_bank
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BankTarget {
    Fixed(usize),
    /// Replicated entry, present in every bank.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankRequest {
    pub target: BankTarget,
    pub address: usize,
}

impl BankRequest {
    pub fn fixed(bank: usize, address: usize) -> Self {
        Self {
            target: BankTarget::Fixed(bank),
            address,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessBatch {
    pub requests: Vec<BankRequest>,
}

impl AccessBatch {
    pub fn new(requests: Vec<BankRequest>) -> Self {
        Self { requests }
    }
}

/// How codebook entries are placed across banks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BankMapping {
    /// Conventional weight codebook: `bank = index mod banks`,
    /// `address = index div banks`.
    IndexMod,
    /// Output codebook: row `r` of a `rows`-row tile owns bank `r`.
    RowDedicated { rows: usize },
    /// Like `IndexMod`, except the listed entries are present in every bank.
    ReplicatedHot { hot: HashSet<usize> },
}

impl BankMapping {
    fn request(&self, index: usize, row: usize, buffer: &BankedBuffer) -> BankRequest {
        let banks = buffer.num_banks;
        match self {
            BankMapping::IndexMod => BankRequest::fixed(index % banks, index / banks),
            BankMapping::RowDedicated { rows } => BankRequest::fixed(row % rows, index),
            BankMapping::ReplicatedHot { hot } => {
                if hot.contains(&index) {
                    BankRequest {
                        target: BankTarget::Any,
                        address: index,
                    }
                } else {
                    BankRequest::fixed(index % banks, index / banks)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScheduleStats {
    pub batches: u64,
    pub cycles: u64,
    pub conflict_cycles: u64,
}

impl ScheduleStats {
    /// Scheduled cycles over the ideal of one batch per cycle.
    pub fn slowdown(&self) -> f64 {
        if self.batches == 0 {
            1.0
        } else {
            self.cycles as f64 / self.batches as f64
        }
    }
}

/// Per-bank load after placing fixed requests and water-filling the rest.
fn bank_loads(batch: &AccessBatch, buffer: &BankedBuffer) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut load = vec![0usize; buffer.num_banks];
    let mut placement = Vec::with_capacity(batch.requests.len());
    let mut flexible = Vec::new();
    for (i, req) in batch.requests.iter().enumerate() {
        match req.target {
            BankTarget::Fixed(b) => {
                if b >= buffer.num_banks {
                    return Err(Error::config(format!(
                        "bank {b} out of range for {} banks",
                        buffer.num_banks
                    )));
                }
                load[b] += 1;
                placement.push(b);
            }
            BankTarget::Any => {
                flexible.push(i);
                placement.push(usize::MAX);
            }
        }
    }
    for i in flexible {
        let b = (0..load.len()).min_by_key(|&b| (load[b], b)).unwrap_or(0);
        load[b] += 1;
        placement[i] = b;
    }
    Ok((load, placement))
}

fn batch_cycles(load: &[usize], ports: usize) -> u64 {
    let worst = load.iter().copied().max().unwrap_or(0);
    worst.div_ceil(ports).max(1) as u64
}

pub fn schedule(batches: &[AccessBatch], buffer: &BankedBuffer) -> Result<ScheduleStats> {
    let mut stats = ScheduleStats::default();
    for batch in batches {
        let (load, _) = bank_loads(batch, buffer)?;
        stats.batches += 1;
        stats.cycles += batch_cycles(&load, buffer.ports_per_bank);
    }
    stats.conflict_cycles = stats.cycles - stats.batches;
    Ok(stats)
}

/// Streams the index matrix in row-major order, `lookups_per_cycle` at a
/// time, through `mapping`, and schedules each group as one batch.
pub fn trace_indices(
    indices: &IndexMatrix,
    lookups_per_cycle: usize,
    buffer: &BankedBuffer,
    mapping: &BankMapping,
) -> Result<ScheduleStats> {
    if lookups_per_cycle == 0 {
        return Err(Error::config("lookups per cycle must be at least 1"));
    }
    let mut stats = ScheduleStats::default();
    let cols = indices.cols();
    let flat = indices.as_slice();
    let mut batch = AccessBatch::default();
    for chunk_start in (0..flat.len()).step_by(lookups_per_cycle) {
        batch.requests.clear();
        let end = (chunk_start + lookups_per_cycle).min(flat.len());
        for (pos, &index) in flat[chunk_start..end].iter().enumerate() {
            let row = (chunk_start + pos) / cols;
            batch.requests.push(mapping.request(index as usize, row, buffer));
        }
        let (load, _) = bank_loads(&batch, buffer)?;
        stats.batches += 1;
        stats.cycles += batch_cycles(&load, buffer.ports_per_bank);
    }
    stats.conflict_cycles = stats.cycles - stats.batches;
    Ok(stats)
}

/// Slowdown of conventional weight-codebook lookups (`bank = index mod banks`).
pub fn trace_conventional_vq(
    indices: &IndexMatrix,
    lookups_per_cycle: usize,
    buffer: &BankedBuffer,
) -> Result<f64> {
    trace_indices(indices, lookups_per_cycle, buffer, &BankMapping::IndexMod).map(|s| s.slowdown())
}

/// Output-codebook lookups with one bank per row. Each cycle reads column `j`
/// of a `rows`-row tile, one index per row, so no two requests share a bank.
pub fn eva_conflict_free_stats(
    indices: &IndexMatrix,
    rows: usize,
    buffer: &BankedBuffer,
) -> Result<ScheduleStats> {
    if rows == 0 {
        return Err(Error::config("tile must have at least one row"));
    }
    if buffer.num_banks < rows {
        return Err(Error::config(format!(
            "row-dedicated mapping needs {rows} banks, buffer has {}",
            buffer.num_banks
        )));
    }
    let mapping = BankMapping::RowDedicated { rows };
    let mut stats = ScheduleStats::default();
    let mut batch = AccessBatch::default();
    for tile_start in (0..indices.rows()).step_by(rows) {
        let tile_end = (tile_start + rows).min(indices.rows());
        for j in 0..indices.cols() {
            batch.requests.clear();
            for r in tile_start..tile_end {
                batch
                    .requests
                    .push(mapping.request(indices.get(r, j), r - tile_start, buffer));
            }
            let (load, _) = bank_loads(&batch, buffer)?;
            stats.batches += 1;
            stats.cycles += batch_cycles(&load, buffer.ports_per_bank);
        }
    }
    stats.conflict_cycles = stats.cycles - stats.batches;
    Ok(stats)
}

pub fn eva_conflict_free_trace(indices: &IndexMatrix, rows: usize, buffer: &BankedBuffer) -> Result<f64> {
    eva_conflict_free_stats(indices, rows, buffer).map(|s| s.slowdown())
}

/// Marks the `budget` most frequently accessed entries as replicated.
/// Ties go to the lower index.
pub fn hot_cold_replicate(frequencies: &[u64], budget: usize) -> BankMapping {
    let mut order: Vec<usize> = (0..frequencies.len()).collect();
    order.sort_by(|&a, &b| frequencies[b].cmp(&frequencies[a]).then(a.cmp(&b)));
    BankMapping::ReplicatedHot {
        hot: order.into_iter().take(budget).collect(),
    }
}

/// Slowdown with the `budget` hottest entries of `indices` replicated.
pub fn trace_replicated_vq(
    indices: &IndexMatrix,
    lookups_per_cycle: usize,
    buffer: &BankedBuffer,
    budget: usize,
) -> Result<f64> {
    let mapping = hot_cold_replicate(&indices.histogram(), budget);
    trace_indices(indices, lookups_per_cycle, buffer, &mapping).map(|s| s.slowdown())
}

/// Bytes fetched per index: a whole `d`-element centroid for weight-codebook
/// lookup, a single precomputed element for output-codebook lookup.
pub fn bytes_per_lookup(mapping: &BankMapping, vector_dim: usize, element_bytes: usize) -> usize {
    match mapping {
        BankMapping::RowDedicated { .. } => element_bytes,
        BankMapping::IndexMod | BankMapping::ReplicatedHot { .. } => vector_dim * element_bytes,
    }
}

/// Writes one CSV row per request: `cycle,bank,address,stalled`.
///
/// Requests beyond a bank's ports in their batch are served in later cycles
/// and marked stalled.
pub fn dump_trace_csv<W: Write>(
    batches: &[AccessBatch],
    buffer: &BankedBuffer,
    out: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["cycle", "bank", "address", "stalled"])
        .map_err(csv_err)?;
    let mut cycle = 0u64;
    for batch in batches {
        let (load, placement) = bank_loads(batch, buffer)?;
        let mut served = vec![0usize; buffer.num_banks];
        for (req, &bank) in batch.requests.iter().zip(&placement) {
            let slot = served[bank] / buffer.ports_per_bank;
            served[bank] += 1;
            wtr.write_record([
                (cycle + slot as u64).to_string(),
                bank.to_string(),
                req.address.to_string(),
                u8::from(slot > 0).to_string(),
            ])
            .map_err(csv_err)?;
        }
        cycle += batch_cycles(&load, buffer.ports_per_bank);
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(banks: &[usize]) -> AccessBatch {
        AccessBatch::new(banks.iter().map(|&b| BankRequest::fixed(b, 0)).collect())
    }

    #[test]
    fn distinct_banks_take_one_cycle() {
        let buf = BankedBuffer::new(8, 2).unwrap();
        let s = schedule(&[batch(&[0, 1, 2, 3, 4, 5, 6, 7])], &buf).unwrap();
        assert_eq!((s.cycles, s.conflict_cycles), (1, 0));
    }

    #[test]
    fn single_bank_serializes() {
        let buf = BankedBuffer::new(8, 2).unwrap();
        let s = schedule(&[batch(&[3; 8])], &buf).unwrap();
        assert_eq!((s.cycles, s.conflict_cycles), (8, 7));
        let dual = BankedBuffer::with_ports(8, 2, 2).unwrap();
        assert_eq!(schedule(&[batch(&[3; 8])], &dual).unwrap().cycles, 4);
    }

    #[test]
    fn out_of_range_bank() {
        let buf = BankedBuffer::new(2, 2).unwrap();
        assert!(matches!(schedule(&[batch(&[2])], &buf), Err(Error::Config(_))));
    }

    #[test]
    fn conventional_extremes() {
        let buf = BankedBuffer::new(4, 16).unwrap();
        let spread = IndexMatrix::new(2, 4, 8, vec![0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
        assert_eq!(trace_conventional_vq(&spread, 4, &buf).unwrap(), 1.0);
        let same = IndexMatrix::new(2, 4, 8, vec![9; 8]).unwrap();
        assert_eq!(trace_conventional_vq(&same, 4, &buf).unwrap(), 4.0);
        assert_eq!(trace_conventional_vq(&same, 8, &buf).unwrap(), 8.0);
    }

    #[test]
    fn row_dedicated_is_conflict_free_even_for_equal_indices() {
        let im = IndexMatrix::new(64, 5, 8, vec![17; 320]).unwrap();
        let buf = BankedBuffer::new(32, 2).unwrap();
        let s = eva_conflict_free_stats(&im, 32, &buf).unwrap();
        assert_eq!(s.conflict_cycles, 0);
        assert_eq!(s.batches, 10);
        let small = BankedBuffer::new(16, 2).unwrap();
        assert!(matches!(
            eva_conflict_free_trace(&im, 32, &small),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn replication_extremes() {
        let data: Vec<u16> = (0..256u16).map(|i| (i * 4) % 16).collect();
        let im = IndexMatrix::new(16, 16, 4, data).unwrap();
        let buf = BankedBuffer::new(4, 2).unwrap();
        let none = trace_conventional_vq(&im, 4, &buf).unwrap();
        assert_eq!(none, 4.0);
        assert_eq!(trace_replicated_vq(&im, 4, &buf, 0).unwrap(), none);
        assert_eq!(trace_replicated_vq(&im, 4, &buf, 16).unwrap(), 1.0);
    }

    #[test]
    fn hot_selection_prefers_frequent_then_low_index() {
        let m = hot_cold_replicate(&[5, 9, 9, 1], 2);
        assert_eq!(m, BankMapping::ReplicatedHot { hot: [1, 2].into_iter().collect() });
    }

    #[test]
    fn lookup_bandwidth_ratio_is_d() {
        let conv = bytes_per_lookup(&BankMapping::IndexMod, 8, 2);
        let eva = bytes_per_lookup(&BankMapping::RowDedicated { rows: 32 }, 8, 2);
        assert_eq!(conv / eva, 8);
    }

    #[test]
    fn trace_dump_marks_stalls() {
        let buf = BankedBuffer::new(2, 2).unwrap();
        let mut out = Vec::new();
        dump_trace_csv(&[batch(&[0, 0, 1]), batch(&[1])], &buf, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "cycle,bank,address,stalled\n0,0,0,0\n1,0,0,1\n0,1,0,0\n2,1,0,0\n"
        );
    }
}
