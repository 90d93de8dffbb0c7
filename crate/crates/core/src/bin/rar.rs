//! Command-line front end: data generation, training, sampling, evaluation,
//! sweeps and scan-order inspection.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rar::eval::{disambiguation_probe, grad_check, oracle_gap, sweep_annealing, sweep_csv, ProbeConfig};
use rar::gridtok::{load_spec, make_dataset, write_shard, Dataset, DatasetShard, GridSpec};
use rar::model::{load_checkpoint, merge_positional, ModelConfig, ModelParams};
use rar::permute::{canonical_scan, invert, AnnealSchedule, Permutation, ScanKind};
use rar::ppm::{self, Palette};
use rar::rng::{stream, Stream};
use rar::sample::{generate, GuidanceSchedule, SampleConfig};
use rar::train::{resume, train, Annealed, FixedRaster, TrainConfig};
use rar::model::init_params;
use rar::Error;

#[derive(Parser)]
#[command(name = "rar", version, about = "Randomized autoregressive modeling on Potts token grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw train/eval shards from a grid spec.
    MakeData(MakeData),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Generate grids from a checkpoint.
    Sample(SampleArgs),
    /// Oracle gaps, the disambiguation probe or a gradient check.
    Eval(EvalArgs),
    /// Annealing sweep over (start, end) pairs.
    Sweep(SweepArgs),
    /// Print a scan order.
    Orders(OrdersArgs),
}

#[derive(Args)]
struct MakeData {
    /// Grid spec JSON.
    #[arg(long, required_unless_present = "random_potts")]
    spec: Option<PathBuf>,
    /// Generate a random spec instead: H,W,V,C.
    #[arg(long, value_delimiter = ',', conflicts_with = "spec")]
    random_potts: Option<Vec<usize>>,
    /// Coupling strength for --random-potts.
    #[arg(long, default_value_t = 1.0)]
    coupling: f64,
    /// Field strength for --random-potts.
    #[arg(long, default_value_t = 0.3)]
    field: f64,
    #[arg(long)]
    train: usize,
    #[arg(long)]
    eval: usize,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the spec's own seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from make-data.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    out: PathBuf,
    /// Preset name (micro, small) or model config JSON.
    #[arg(long, default_value = "small")]
    model: String,
    /// Training config JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    anneal_start: Option<usize>,
    #[arg(long)]
    anneal_end: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Canonical order the schedule anneals to.
    #[arg(long)]
    canonical: Option<ScanKind>,
    /// Raster order only, with no permutation sampling at all.
    #[arg(long)]
    raster_only: bool,
    /// Continue from this checkpoint (its .opt file must sit next to it).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory (for the grid shape and spec fingerprint).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Class for every sample; by default classes cycle.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
    #[arg(long, default_value = "none")]
    schedule: GuidanceSchedule,
    #[arg(long, default_value_t = 1.0)]
    power: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    greedy: bool,
    /// Decoding order.
    #[arg(long, default_value = "row_major")]
    order: ScanKind,
    /// Allow a non-raster decoding order.
    #[arg(long)]
    force_order: bool,
    /// Merge the target-aware table into the positional table first.
    #[arg(long)]
    merge_pe: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a PPM per grid.
    #[arg(long)]
    render: bool,
    #[arg(long, default_value_t = 16)]
    scale: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present_any = ["probe", "grad_check"])]
    ckpt: Option<PathBuf>,
    #[arg(long, required_unless_present_any = ["probe", "grad_check"])]
    data: Option<PathBuf>,
    /// Orders to score, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "row_major")]
    order: Vec<ScanKind>,
    /// Score at most this many eval grids.
    #[arg(long)]
    limit: Option<usize>,
    /// Run the target-aware disambiguation probe instead.
    #[arg(long, conflicts_with_all = ["ckpt", "grad_check"])]
    probe: bool,
    /// Run a gradient check on a micro model instead.
    #[arg(long, conflicts_with = "ckpt")]
    grad_check: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "small")]
    model: String,
    #[arg(long, value_delimiter = ',', required = true)]
    starts: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    ends: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OrdersArgs {
    #[arg(long)]
    kind: ScanKind,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    w: usize,
    /// Also write a visit-order heat map.
    #[arg(long)]
    ppm: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    scale: usize,
}

/// A failure with its exit code: 2 for usage/config problems, 1 otherwise.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_)
            | Error::Json(_)
            | Error::InvalidSchedule { .. }
            | Error::ScanShape { .. }
            | Error::FingerprintMismatch { .. }
            | Error::TokenOutOfRange { .. }
            | Error::LabelOutOfRange { .. }
            | Error::MergedNonRaster
            | Error::LengthMismatch { .. }
            | Error::Intractable { .. } => 2,
            _ => 1,
        };
        Fail(code, e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(1, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Fail>;

/// Reads an input the user named; a missing file is a usage error.
fn input<'p, T>(path: &'p Path, what: &str, load: impl FnOnce(&'p Path) -> rar::Result<T>) -> CliResult<T> {
    load(path).map_err(|e| match e {
        Error::Io(io) if io.kind() == ErrorKind::NotFound => Fail(2, format!("{what} not found: {}", path.display())),
        other => Fail::from(other),
    })
}

fn model_config(name: &str, spec: &GridSpec) -> CliResult<ModelConfig> {
    if name.ends_with(".json") {
        let path = Path::new(name);
        return input(path, "model config", |p| Ok(serde_json::from_slice(&fs::read(p)?)?));
    }
    Ok(ModelConfig::preset(name, spec.vocab_size, spec.num_cells(), spec.num_classes)?)
}

fn train_config(path: Option<&PathBuf>) -> CliResult<TrainConfig> {
    match path {
        Some(p) => input(p, "training config", |p| Ok(serde_json::from_slice(&fs::read(p)?)?)),
        None => Ok(TrainConfig::desk()),
    }
}

fn load_data(dir: &Path) -> CliResult<Dataset> {
    input(dir, "dataset", Dataset::load)
}

fn make_data(a: MakeData) -> CliResult {
    let spec = match (&a.spec, &a.random_potts) {
        (Some(p), _) => input(p, "spec", load_spec)?,
        (None, Some(d)) if d.len() != 4 => return Err(Fail(2, "--random-potts takes H,W,V,C".into())),
        (None, Some(d)) => GridSpec::random_potts(d[0], d[1], d[2], d[3], a.coupling, a.field, a.seed.unwrap_or(0))?,
        (None, None) => return Err(Fail(2, "need --spec or --random-potts".into())),
    };
    let seed = a.seed.unwrap_or(spec.seed);
    let data = make_dataset(&spec, a.train, a.eval, seed)?;
    if !data.meta.exact {
        eprintln!("warning: grid too large for exact sampling; used one Gibbs sweep per grid");
    }
    data.save(&a.out)?;
    println!("{:016x}", spec.fingerprint());
    Ok(())
}

fn run_train(a: TrainArgs) -> CliResult {
    let data = load_data(&a.data)?;
    let spec = &data.spec;
    let model = model_config(&a.model, spec)?;
    let mut cfg = train_config(a.config.as_ref())?;
    if let Some(e) = a.epochs {
        cfg = cfg.with_epochs(e);
    }
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.base_lr = a.lr.unwrap_or(cfg.base_lr);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.canonical_kind = a.canonical.unwrap_or(cfg.canonical_kind);
    if a.anneal_start.is_some() || a.anneal_end.is_some() {
        let start = a.anneal_start.unwrap_or(cfg.anneal.start_epoch);
        let end = a.anneal_end.unwrap_or(cfg.anneal.end_epoch);
        cfg.anneal = AnnealSchedule::new(start, end, cfg.total_epochs)?;
    }
    cfg.validate()?;
    let (h, w) = (spec.height, spec.width);
    let artifacts = match (&a.resume, a.raster_only) {
        (Some(ckpt), true) => resume(&a.out, ckpt, &cfg, &data.train, FixedRaster { len: h * w })?,
        (Some(ckpt), false) => resume(&a.out, ckpt, &cfg, &data.train, Annealed::new(cfg.canonical_kind, h, w)?)?,
        (None, raster_only) => {
            let params: ModelParams<f32> = init_params(&model, &mut stream(cfg.seed, Stream::Init, 0))?;
            if raster_only {
                train(&a.out, params, &cfg, &data.train, FixedRaster { len: h * w })?
            } else {
                train(&a.out, params, &cfg, &data.train, Annealed::new(cfg.canonical_kind, h, w)?)?
            }
        }
    };
    if let (Some(first), Some(last)) = (artifacts.metrics.first(), artifacts.metrics.last()) {
        println!("loss {:.4} -> {:.4} over {} steps", first.loss, last.loss, artifacts.metrics.len());
    }
    println!("{}", artifacts.final_checkpoint.display());
    Ok(())
}

fn scan(kind: ScanKind, spec: &GridSpec) -> CliResult<Permutation> {
    Ok(canonical_scan(kind, spec.height, spec.width)?)
}

fn run_sample(a: SampleArgs) -> CliResult {
    let data = load_data(&a.data)?;
    let spec = &data.spec;
    let mut params: ModelParams<f32> = input(&a.ckpt, "checkpoint", load_checkpoint)?;
    if a.merge_pe {
        params = merge_positional(&params);
    }
    let order = scan(a.order, spec)?;
    let cfg = SampleConfig {
        order: Some(order),
        temperature: a.temperature,
        guidance_scale: a.guidance,
        guidance_schedule: a.schedule,
        scale_power: a.power,
        greedy: a.greedy,
        force_order: a.force_order,
    };
    cfg.validate()?;
    if let Some(c) = a.class {
        spec.check_label(c)?;
    }
    let grids = (0..a.n)
        .into_par_iter()
        .map(|i| {
            let class = a.class.unwrap_or(i % spec.num_classes);
            generate(&params, spec.height, spec.width, Some(class), &cfg, &mut stream(a.seed, Stream::Sampling, i as u64))
        })
        .collect::<rar::Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out)?;
    let palette = Palette::for_vocab(spec.vocab_size);
    fs::write(a.out.join("palette.json"), serde_json::to_string_pretty(&palette).map_err(Error::from)?)?;
    if a.render {
        for (i, g) in grids.iter().enumerate() {
            let img = ppm::render_tokens(g.height, g.width, &g.tokens, &palette, a.scale);
            ppm::write(a.out.join(format!("sample_{i:05}.ppm")), &img)?;
        }
    }
    write_shard(a.out.join("samples.shard"), &DatasetShard::new(spec, grids)?)?;
    println!("{} grids -> {}", a.n, a.out.display());
    Ok(())
}

fn emit(out: Option<&PathBuf>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult {
    let json = |v: &dyn erased::Json| v.to_json();
    if a.probe {
        let report = disambiguation_probe(&ProbeConfig {
            seed: a.seed,
            ..ProbeConfig::default()
        })?;
        return emit(a.out.as_ref(), &json(&report));
    }
    if a.grad_check {
        let report = grad_check(&ModelConfig::micro(5, 8, 2), a.seed, 1e-3, 1e-3)?;
        return emit(a.out.as_ref(), &json(&report));
    }
    let data = load_data(a.data.as_ref().expect("clap enforces --data"))?;
    let params: ModelParams<f32> = input(a.ckpt.as_ref().expect("clap enforces --ckpt"), "checkpoint", load_checkpoint)?;
    let orders = a
        .order
        .iter()
        .map(|&k| Ok((k.name().to_string(), scan(k, &data.spec)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let n = a.limit.unwrap_or(data.eval.len()).min(data.eval.len());
    let rows = oracle_gap(&params, &data.spec, &orders, &data.eval[..n])?;
    emit(a.out.as_ref(), &json(&rows))
}

fn run_sweep(a: SweepArgs) -> CliResult {
    let data = load_data(&a.data)?;
    let model = model_config(&a.model, &data.spec)?;
    let mut base = train_config(a.config.as_ref())?;
    if let Some(e) = a.epochs {
        base = base.with_epochs(e);
    }
    base.batch_size = a.batch.unwrap_or(base.batch_size);
    base.base_lr = a.lr.unwrap_or(base.base_lr);
    base.validate()?;
    let result = sweep_annealing(&data.spec, &model, &base, &a.starts, &a.ends, &a.seeds, &data.train, &data.eval)?;
    for (s, e) in &result.skipped {
        eprintln!("skipped invalid schedule start={s} end={e} (total {})", base.total_epochs);
    }
    emit(a.out.as_ref(), sweep_csv(&result.rows).trim_end())
}

fn run_orders(a: OrdersArgs) -> CliResult {
    let order = canonical_scan(a.kind, a.h, a.w)?;
    let row: Vec<String> = order.order().iter().map(|i| i.to_string()).collect();
    println!("{}", row.join(","));
    if let Some(path) = &a.ppm {
        // Pixel value at each cell is the step at which it is visited.
        let visit = invert(&order);
        ppm::write(path, &ppm::render_visit_order(a.h, a.w, visit.order(), a.scale))?;
    }
    Ok(())
}

mod erased {
    use serde::Serialize;

    pub trait Json {
        fn to_json(&self) -> String;
    }

    impl<T: Serialize> Json for T {
        fn to_json(&self) -> String {
            serde_json::to_string_pretty(self).expect("report serializes")
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("RAR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().ok();
    }
    let result = match cli.cmd {
        Cmd::MakeData(a) => make_data(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Sample(a) => run_sample(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Sweep(a) => run_sweep(a),
        Cmd::Orders(a) => run_orders(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
