mod weights;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eva_core::config::SimConfig;
use eva_core::kernels::{gemv_reference, vq_matvec};
use eva_core::memsys::{dump_trace_csv, AccessBatch, BankRequest, BankedBuffer};
use eva_core::perfsim::{decode_counters, decode_stage_cycles, energy, ArchSpec, BaselineSpec};
use eva_core::studies::{
    batch_sweep, config_hash, conflict_study, dse_eu_sweep, ingest_trace, run_e2e,
    write_trace_csv, Accelerator, ConflictMethod, ConflictWorkload, Dataset, E2eMode, ModelSpec,
    OutputFormat, StudyResult,
};
use eva_core::vqcore::{
    empirical_utilization, read_layer, train_codebooks_with_report, write_layer, VqConfig,
};
use eva_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "eva-sim", version, about = "VQ GEMV engine and accelerator simulator")]
struct Cli {
    /// JSON configuration; omitted keys take the reference defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; the EVA_SIM_OUT environment variable takes precedence.
    #[arg(long, global = true, default_value = "eva-out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Tsv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Tsv => OutputFormat::Tsv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mean,
    PerRequest,
}

#[derive(Subcommand)]
enum Command {
    /// Train additive codebooks for a weight matrix and write an EVAQ container.
    Quantize {
        /// Generate K x N weights from SEED instead of reading a file.
        #[arg(long, num_args = 3, value_names = ["K", "N", "SEED"])]
        synthetic: Option<Vec<u64>>,
        /// EVAW weight file.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Container path (default: <out-dir>/layer.evaq).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        codebooks: Option<usize>,
        #[arg(long)]
        n_share: Option<usize>,
    },
    /// Check the output-codebook path against dequantize-then-GEMV.
    Verify {
        layer: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Integer inputs; require bit-exact agreement.
        #[arg(long)]
        integer: bool,
    },
    /// Stage breakdown and energy of one layer.
    Simulate {
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Design-space sweep, e.g. `--sweep eu 1..16` or `--sweep batch 1,2,4,8`.
    Dse {
        #[arg(long, num_args = 2, value_names = ["PARAM", "RANGE"])]
        sweep: Option<Vec<String>>,
    },
    /// Prefill/decode simulation of a request trace on every preset.
    E2e {
        #[arg(long, conflicts_with = "dataset")]
        trace: Option<PathBuf>,
        /// Synthetic trace with this dataset's mean lengths.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        requests: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Bank-conflict comparison of conventional VQ and epilogue lookup.
    Conflict {
        /// Also write the conventional access trace as CSV.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
    },
    /// Write synthetic K x N weights as an EVAW file.
    GenWeights {
        #[arg(num_args = 3, value_names = ["K", "N", "SEED"], required = true)]
        shape: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic request trace CSV.
    GenTrace {
        #[arg(long, default_value = "dolly")]
        dataset: String,
        #[arg(long, default_value_t = 1000)]
        requests: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Config(_)) => 2,
            Failure::Core(_) => 3,
            Failure::Verification(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

struct Ctx {
    cfg: SimConfig,
    seed: u64,
    out_dir: PathBuf,
    format: OutputFormat,
    pool: rayon::ThreadPool,
}

impl Ctx {
    fn emit<R: Serialize>(&self, result: &StudyResult<R>, params: &impl Serialize) -> CliResult<PathBuf> {
        let hash = config_hash(&(&self.cfg, self.seed, params))?;
        let path = result.write(&self.out_dir, &hash, self.format)?;
        print!("{}", result.to_delimited(self.format)?);
        eprintln!("wrote {}", path.display());
        Ok(path)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    let out_dir = std::env::var_os("EVA_SIM_OUT").map_or(cli.out_dir, PathBuf::from);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(j);
    }
    let ctx = Ctx {
        cfg,
        seed: cli.seed,
        out_dir,
        format: cli.format.into(),
        pool: pool.build().map_err(|e| Error::Config(e.to_string()))?,
    };
    match cli.command {
        Command::Quantize {
            synthetic,
            input,
            out,
            d,
            bits,
            codebooks,
            n_share,
        } => cmd_quantize(&ctx, synthetic, input, out, [d, codebooks, n_share], bits),
        Command::Verify { layer, trials, integer } => cmd_verify(&ctx, &layer, trials, integer),
        Command::Simulate { batch } => cmd_simulate(&ctx, batch),
        Command::Dse { sweep } => cmd_dse(&ctx, sweep),
        Command::E2e {
            trace,
            dataset,
            requests,
            mode,
        } => cmd_e2e(&ctx, trace, dataset, requests, mode),
        Command::Conflict { dump_trace } => cmd_conflict(&ctx, dump_trace),
        Command::GenWeights { shape, out } => {
            let w = weights::synthetic_weights(shape[0] as usize, shape[1] as usize, shape[2])?;
            std::fs::write(&out, weights::encode_weights(&w)).map_err(Error::from)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::GenTrace { dataset, requests, out } => cmd_gen_trace(&ctx, &dataset, requests, out),
    }
}

fn cmd_quantize(
    ctx: &Ctx,
    synthetic: Option<Vec<u64>>,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    [d, codebooks, n_share]: [Option<usize>; 3],
    bits: Option<u32>,
) -> CliResult {
    let base = ctx.cfg.vq;
    let cfg = VqConfig::new(
        d.unwrap_or(base.vector_dim()),
        bits.unwrap_or(base.index_bits()),
        codebooks.unwrap_or(base.num_codebooks()),
        n_share.unwrap_or(base.group_size()),
    )?;
    let w = match (synthetic, input) {
        (Some(s), None) => weights::synthetic_weights(s[0] as usize, s[1] as usize, s[2])?,
        (None, Some(path)) => weights::read_weights(&path)?,
        _ => return Err(Error::Config("quantize needs --synthetic K N SEED or --input FILE".into()).into()),
    };
    let (layer, report) = train_codebooks_with_report(&w, &cfg, ctx.seed)?;
    let path = out.unwrap_or_else(|| ctx.out_dir.join("layer.evaq"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    write_layer(&layer, &path)?;

    let (k, n) = w.shape();
    println!("layer {k}x{n}  d={} n={} C={} N_share={}  q={} bits", cfg.vector_dim(), cfg.index_bits(), cfg.num_codebooks(), cfg.group_size(), cfg.effective_bitwidth());
    for (c, mse) in report.stage_mse.iter().enumerate() {
        println!("mse after codebook {}: {mse:.6e}", c + 1);
    }
    println!("mse: {:.6e}", report.final_mse());
    for (c, im) in layer.indices().iter().enumerate() {
        println!("codebook {} utilization: {:.4}", c + 1, empirical_utilization(im));
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_verify(ctx: &Ctx, path: &Path, trials: usize, integer: bool) -> CliResult {
    let layer = read_layer(path)?;
    let w = layer.dequantize()?;
    let (k, _) = layer.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut worst = 0f64;
    let mut exact = true;
    for _ in 0..trials {
        let x: Vec<f64> = (0..k)
            .map(|_| {
                if integer {
                    rng.random_range(-16i32..=16) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let got = vq_matvec(&x, &layer)?;
        let want = gemv_reference(&x, &w)?;
        exact &= got == want;
        let scale = want.iter().fold(0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let err = got.iter().zip(&want).fold(0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    println!("trials: {trials}");
    println!("max relative error: {worst:.3e}");
    if integer && !exact {
        return Err(Failure::Verification("integer inputs did not reproduce bit-exactly".into()));
    }
    if worst > 1e-9 {
        return Err(Failure::Verification(format!("max relative error {worst:.3e} exceeds 1e-9")));
    }
    println!("PASS");
    Ok(())
}

#[derive(Serialize)]
struct SimulateRow {
    study: &'static str,
    k: usize,
    n: usize,
    batch: usize,
    d: usize,
    bits: u32,
    codebooks: usize,
    n_share: usize,
    num_eus: usize,
    gemm_cycles: u64,
    epilogue_cycles: u64,
    memory_cycles: u64,
    per_tile_cycles: u64,
    tiles: u64,
    fill_cycles: u64,
    latency_cycles: u64,
    latency_us: f64,
    dominant: &'static str,
    energy_j: f64,
    dram_share: f64,
}

#[cfg(test)]
const SIMULATE_COLUMNS: &[&str] = &[
    "study", "k", "n", "batch", "d", "bits", "codebooks", "n_share", "num_eus", "gemm_cycles",
    "epilogue_cycles", "memory_cycles", "per_tile_cycles", "tiles", "fill_cycles",
    "latency_cycles", "latency_us", "dominant", "energy_j", "dram_share",
];

fn cmd_simulate(ctx: &Ctx, batch: usize) -> CliResult {
    let arch = ctx.cfg.arch_spec()?;
    let (vq, layer) = (ctx.cfg.vq, ctx.cfg.layer);
    let s = decode_stage_cycles(&arch, &vq, &layer, batch)?;
    let e = energy(&decode_counters(&arch, &vq, &layer, batch)?, &ctx.cfg.energy);
    let row = SimulateRow {
        study: "simulate",
        k: layer.k,
        n: layer.n,
        batch,
        d: vq.vector_dim(),
        bits: vq.index_bits(),
        codebooks: vq.num_codebooks(),
        n_share: vq.group_size(),
        num_eus: arch.num_eus,
        gemm_cycles: s.gemm,
        epilogue_cycles: s.epilogue,
        memory_cycles: s.memory,
        per_tile_cycles: s.per_tile,
        tiles: s.tiles,
        fill_cycles: s.fill,
        latency_cycles: s.latency(),
        latency_us: arch.cycles_to_seconds(s.latency()) * 1e6,
        dominant: s.dominant().as_str(),
        energy_j: e.total(),
        dram_share: e.dram_share(),
    };
    ctx.emit(&StudyResult::new("simulate", vec![row]), &("simulate", batch))?;
    Ok(())
}

/// `a..b` (inclusive), `a..=b`, `a,b,c` or a single value.
fn parse_range(text: &str) -> eva_core::Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse sweep range `{text}`"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let values = if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',').map(num).collect::<eva_core::Result<Vec<_>>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn cmd_dse(ctx: &Ctx, sweep: Option<Vec<String>>) -> CliResult {
    let arch = ctx.cfg.arch_spec()?;
    let (vq, layer) = (ctx.cfg.vq, ctx.cfg.layer);
    let (param, values) = match sweep {
        Some(s) => (s[0].clone(), parse_range(&s[1])?),
        None => ("eu".to_string(), ctx.cfg.study.eu_values()),
    };
    match param.as_str() {
        "eu" => {
            let rows = ctx.pool.install(|| {
                values
                    .par_iter()
                    .map(|&e| dse_eu_sweep(&arch, &vq, &layer, &[e], &ctx.cfg.energy))
                    .collect::<eva_core::Result<Vec<_>>>()
            })?;
            let mut rows: Vec<_> = rows.into_iter().flat_map(|r| r.rows).collect();
            rows.sort_by_key(|r| r.num_eus);
            rows.dedup_by_key(|r| r.num_eus);
            ctx.emit(&StudyResult::new("dse_eu", rows), &("dse_eu", &values))?;
        }
        "batch" => {
            let mut values = values;
            values.sort_unstable();
            values.dedup();
            let mut series = vec![Accelerator::vq("EVA", vq)];
            series.push(Accelerator::WeightStationary(BaselineSpec::int8_mode()));
            series.push(Accelerator::WeightStationary(BaselineSpec::systolic_fp16()));
            let max_batch = ctx.cfg.study.max_batch;
            let parts = ctx.pool.install(|| {
                series
                    .par_iter()
                    .map(|s| batch_sweep(&arch, &layer, std::slice::from_ref(s), &values, &ctx.cfg.energy, max_batch))
                    .collect::<eva_core::Result<Vec<_>>>()
            })?;
            let rows = parts.into_iter().flat_map(|r| r.rows).collect();
            ctx.emit(&StudyResult::new("batch", rows), &("batch", &values))?;
        }
        other => {
            return Err(Error::Config(format!("unknown sweep parameter `{other}` (expected eu or batch)")).into())
        }
    }
    Ok(())
}

fn cmd_e2e(
    ctx: &Ctx,
    trace: Option<PathBuf>,
    dataset: Option<String>,
    requests: Option<usize>,
    mode: Option<Mode>,
) -> CliResult {
    let study = &ctx.cfg.study;
    let trace = match trace {
        Some(path) => ingest_trace(&path)?,
        None => {
            let ds: Dataset = dataset.as_deref().unwrap_or(&study.dataset).parse()?;
            ds.synthetic(requests.unwrap_or(study.requests), ctx.seed)?
        }
    };
    let s = trace.summary();
    eprintln!(
        "trace: {} requests, mean input {:.2}, mean output {:.2}",
        s.requests, s.mean_input, s.mean_output
    );
    let mode = match mode {
        Some(Mode::Mean) => E2eMode::MeanLength,
        Some(Mode::PerRequest) => E2eMode::PerRequest,
        None => study.e2e_mode,
    };
    let mut model = ModelSpec::llama2_7b();
    model.attention_cost_per_token = study.attention_cost_per_token;
    let arch: ArchSpec = ctx.cfg.arch_spec()?;
    let mut accs = Accelerator::presets();
    accs[0] = Accelerator::vq("EVA-W2", ctx.cfg.vq.with_num_codebooks(2)?);
    let parts = ctx.pool.install(|| {
        accs.par_iter()
            .map(|a| run_e2e(&trace, &model, &arch, std::slice::from_ref(a), mode))
            .collect::<eva_core::Result<Vec<_>>>()
    })?;
    let rows = parts.into_iter().flat_map(|r| r.rows).collect();
    let hash_input: Vec<_> = trace.requests().iter().map(|r| (r.input_len, r.output_len)).collect();
    ctx.emit(&StudyResult::new("e2e", rows), &("e2e", mode, hash_input))?;
    Ok(())
}

fn cmd_conflict(ctx: &Ctx, dump: Option<PathBuf>) -> CliResult {
    let study = &ctx.cfg.study;
    let workload = ConflictWorkload::uniform(
        study.conflict_rows,
        study.conflict_cols,
        ctx.cfg.vq.index_bits(),
        ctx.seed,
    )?;
    let result = conflict_study(&workload, &ConflictMethod::table())?;
    if let Some(path) = dump {
        let banks = workload.buffer.num_banks;
        let batches: Vec<AccessBatch> = workload
            .indices
            .as_slice()
            .chunks(workload.lookups_per_cycle)
            .map(|c| AccessBatch::new(c.iter().map(|&i| BankRequest::fixed(i as usize % banks, i as usize / banks)).collect()))
            .collect();
        let buffer: BankedBuffer = workload.buffer;
        let file = std::fs::File::create(&path).map_err(Error::from)?;
        dump_trace_csv(&batches, &buffer, std::io::BufWriter::new(file))?;
        eprintln!("wrote {}", path.display());
    }
    ctx.emit(&result, &"conflict")?;
    Ok(())
}

fn cmd_gen_trace(ctx: &Ctx, dataset: &str, requests: usize, out: Option<PathBuf>) -> CliResult {
    let ds: Dataset = dataset.parse()?;
    let trace = ds.synthetic(requests, ctx.seed)?;
    let path = out.unwrap_or_else(|| ctx.out_dir.join(format!("{}.csv", ds.name())));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    let file = std::fs::File::create(&path).map_err(Error::from)?;
    write_trace_csv(&trace, std::io::BufWriter::new(file))?;
    let s = trace.summary();
    println!(
        "{} requests, mean input {:.2}, mean output {:.2}",
        s.requests, s.mean_input, s.mean_output
    );
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_range("1,8,32").unwrap(), vec![1, 8, 32]);
        assert!(parse_range("4..1").is_err());
        assert!(parse_range("0,1").is_err());
        assert!(parse_range("x").is_err());
    }

    #[test]
    fn simulate_header_matches_schema() {
        let ctx_cfg = SimConfig::default();
        let arch = ctx_cfg.arch_spec().unwrap();
        let s = decode_stage_cycles(&arch, &ctx_cfg.vq, &ctx_cfg.layer, 1).unwrap();
        let row = SimulateRow {
            study: "simulate", k: 1, n: 1, batch: 1, d: 1, bits: 1, codebooks: 1, n_share: 1,
            num_eus: 1, gemm_cycles: s.gemm, epilogue_cycles: 0, memory_cycles: 0,
            per_tile_cycles: 0, tiles: 0, fill_cycles: 0, latency_cycles: 0, latency_us: 0.0,
            dominant: "gemm", energy_j: 0.0, dram_share: 0.0,
        };
        let text = StudyResult::new("simulate", vec![row]).to_delimited(OutputFormat::Csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), SIMULATE_COLUMNS.join(","));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::Core(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(Failure::Core(Error::Corruption("x".into())).exit_code(), 3);
        assert_eq!(Failure::Verification("x".into()).exit_code(), 4);
    }
}
