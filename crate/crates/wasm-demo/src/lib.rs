//! Browser bindings. Each export takes a JSON run configuration (the same
//! schema the command line accepts, `""` meaning defaults) and returns its
//! result as a JSON string.

use eva_core::config::SimConfig;
use eva_core::perfsim::{decode_stage_cycles, eu_saturation_point, BaselineSpec};
use eva_core::studies::{
    batch_sweep, conflict_study, dse_eu_sweep, Accelerator, ConflictMethod, ConflictWorkload,
};
use eva_core::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn load(config: &str) -> Result<SimConfig> {
    if config.trim().is_empty() {
        return Ok(SimConfig::default());
    }
    SimConfig::from_json(config)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| eva_core::Error::Config(e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct StageReport {
    pub gemm: u64,
    pub epilogue: u64,
    pub memory: u64,
    pub per_tile: u64,
    pub tiles: u64,
    pub fill: u64,
    pub latency: u64,
    pub latency_us: f64,
    pub dominant: &'static str,
    pub saturation_eus: usize,
}

pub fn stage_report(config: &str, batch: usize) -> Result<StageReport> {
    let cfg = load(config)?;
    let arch = cfg.arch_spec()?;
    let s = decode_stage_cycles(&arch, &cfg.vq, &cfg.layer, batch)?;
    Ok(StageReport {
        gemm: s.gemm,
        epilogue: s.epilogue,
        memory: s.memory,
        per_tile: s.per_tile,
        tiles: s.tiles,
        fill: s.fill,
        latency: s.latency(),
        latency_us: arch.cycles_to_seconds(s.latency()) * 1e6,
        dominant: s.dominant().as_str(),
        saturation_eus: eu_saturation_point(&arch, &cfg.vq, &cfg.layer),
    })
}

pub fn eu_sweep_rows(config: &str, lo: usize, hi: usize) -> Result<String> {
    let cfg = load(config)?;
    if lo == 0 || lo > hi {
        return Err(eva_core::Error::Config("EU range must satisfy 1 <= lo <= hi".into()));
    }
    let eus: Vec<usize> = (lo..=hi).collect();
    let r = dse_eu_sweep(&cfg.arch_spec()?, &cfg.vq, &cfg.layer, &eus, &cfg.energy)?;
    to_json(&r.rows)
}

pub fn batch_sweep_rows(config: &str) -> Result<String> {
    let cfg = load(config)?;
    let series = [
        Accelerator::vq("EVA", cfg.vq),
        Accelerator::WeightStationary(BaselineSpec::int8_mode()),
        Accelerator::WeightStationary(BaselineSpec::systolic_fp16()),
    ];
    let r = batch_sweep(
        &cfg.arch_spec()?,
        &cfg.layer,
        &series,
        &cfg.study.batches,
        &cfg.energy,
        cfg.study.max_batch,
    )?;
    to_json(&r.rows)
}

pub fn conflict_rows(rows: usize, cols: usize, bits: u32, seed: u64) -> Result<String> {
    if !(1..=16).contains(&bits) {
        return Err(eva_core::Error::Config("index bits must be in 1..=16".into()));
    }
    let workload = ConflictWorkload::uniform(rows, cols, bits, seed)?;
    let r = conflict_study(&workload, &ConflictMethod::table())?;
    to_json(&r.rows)
}

fn js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = stageBreakdown)]
pub fn stage_breakdown(config: &str, batch: usize) -> std::result::Result<String, JsValue> {
    js(stage_report(config, batch).and_then(|s| to_json(&s)))
}

#[wasm_bindgen(js_name = euSweep)]
pub fn eu_sweep(config: &str, lo: usize, hi: usize) -> std::result::Result<String, JsValue> {
    js(eu_sweep_rows(config, lo, hi))
}

#[wasm_bindgen(js_name = batchSweep)]
pub fn batch_sweep_js(config: &str) -> std::result::Result<String, JsValue> {
    js(batch_sweep_rows(config))
}

#[wasm_bindgen(js_name = conflictTable)]
pub fn conflict_table(rows: usize, cols: usize, bits: u32, seed: u64) -> std::result::Result<String, JsValue> {
    js(conflict_rows(rows, cols, bits, seed))
}
