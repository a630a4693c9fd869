//! `ksp` command line: simulate, serve, send, recon, evaluate.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{read_dataset_messages, write_dataset};
use crate::detection::{
    detections_to_json, evaluate, ground_truth_to_json, load_external_detections, load_ground_truth, Detection,
    EvaluationConfig, MetricsDocument,
};
use crate::model::SamplingMask;
use crate::pgm::{slice_file_name, write_pgm};
use crate::phantom::{simulate_volume, PhantomSet};
use crate::pipeline::{
    build_chain, run_chain, ChainConfig, DetectConfig, Item, MaskSource, ReconConfig, ReconMethod, ReportConfig,
    DEFAULT_BLOB_MIN_AREA, DEFAULT_BLOB_THRESHOLD,
};
use crate::recon::CgConfig;
use crate::wire::{run_client, run_server, GadgetMessage, DEFAULT_PORT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ksp", version, about = "Streaming k-space reconstruction and lesion-detection evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a phantom dataset and its ground-truth boxes
    Simulate(SimulateArgs),
    /// Run the reconstruction server
    Serve(ServeArgs),
    /// Replay a dataset against a server and store the results
    Send(SendArgs),
    /// Reconstruct a dataset offline
    Recon(ReconArgs),
    /// Score detections against ground truth
    Evaluate(EvaluateArgs),
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

fn rate(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 1.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a rate >= 1, got {s:?}")),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1], got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128, value_parser = positive_usize)]
    size: usize,
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    coils: usize,
    #[arg(long, default_value_t = 16, value_parser = positive_usize)]
    slices: usize,
    #[arg(long, default_value_t = 8)]
    lesions: usize,
    #[arg(long, default_value_t = 0.002, value_parser = non_negative)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.35, value_parser = unit_interval)]
    contrast: f64,
    /// Interior ellipses per slice
    #[arg(long, default_value_t = 5)]
    ellipses: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Chain configuration JSON
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct SendArgs {
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_PORT}"))]
    addr: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MethodArg {
    ZeroFill,
    CgSense,
}

#[derive(Debug, Args)]
struct ReconArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 1.0, value_parser = rate)]
    rate: f64,
    /// ACS fraction; defaults to 0.08 up to R=4 and 0.04 above
    #[arg(long, value_parser = unit_interval)]
    acs: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = CgConfig::default().lambda, value_parser = non_negative)]
    lambda: f64,
    #[arg(long, default_value_t = CgConfig::default().max_iters, value_parser = positive_usize)]
    max_iters: usize,
    #[arg(long, default_value_t = CgConfig::default().rel_tol, value_parser = unit_interval)]
    tol: f64,
    /// Blob detector intensity threshold
    #[arg(long, default_value_t = DEFAULT_BLOB_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_BLOB_MIN_AREA, value_parser = positive_usize)]
    min_area: usize,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    iou: f64,
    /// Per-slice metrics written by `recon`
    #[arg(long)]
    ssim: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    confidence: f64,
    #[arg(long)]
    out: PathBuf,
}

pub const METRICS_FILE: &str = "metrics.json";
pub const DETECTIONS_FILE: &str = "detections.json";

/// Ground-truth path written next to a simulated dataset: `d.bin` → `d.gt.json`.
pub fn ground_truth_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.with_file_name(format!("{stem}.gt.json"))
}

/// The chain `recon` runs for the given flags; `serve` with this configuration
/// (plus a ground-truth path) reproduces it.
pub fn recon_chain_config(
    method: ReconMethod,
    rate: f64,
    acs_fraction: Option<f64>,
    seed: u64,
    cg: CgConfig,
    detect: DetectConfig,
) -> ChainConfig {
    ChainConfig::standard(
        ReconConfig {
            method,
            cg,
            mask: MaskSource::Policy {
                rate,
                acs_fraction,
                seed,
            },
            image_dir: None,
        },
        detect,
        ReportConfig::default(),
    )
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let set = PhantomSet {
        size: a.size,
        coils: a.coils,
        slices: a.slices,
        lesions: a.lesions,
        contrast: a.contrast,
        noise_sigma: a.noise,
        ellipses: a.ellipses,
        seed: a.seed,
    };
    let vol = simulate_volume(&set)?;
    let slices: Vec<_> = vol
        .kspace
        .into_iter()
        .map(|k| {
            let n = k.num_pe();
            (k, SamplingMask::full(n))
        })
        .collect();
    write_dataset(&slices, &a.out)?;
    let gt = ground_truth_path(&a.out);
    write_file(&gt, ground_truth_to_json(&vol.ground_truth))?;
    println!(
        "wrote {} ({} slices) and {} ({} boxes)",
        a.out.display(),
        slices.len(),
        gt.display(),
        vol.ground_truth.len()
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ChainConfig::from_json(&read_file(&a.config)?)?;
    cfg.validate()?;
    run_server(a.port, cfg).with_context(|| format!("serving on port {}", a.port))
}

fn send(a: SendArgs) -> Result<()> {
    let summary = run_client(&a.addr, &a.input, &a.out)?;
    println!("{}", serde_json::to_string(&summary)?);
    if let Some(err) = summary.server_error {
        bail!("server reported an error: {err}");
    }
    Ok(())
}

fn recon(a: ReconArgs) -> Result<()> {
    let method = match a.method {
        MethodArg::ZeroFill => ReconMethod::ZeroFill,
        MethodArg::CgSense => ReconMethod::CgSense,
    };
    let cg = CgConfig {
        lambda: a.lambda,
        max_iters: a.max_iters,
        rel_tol: a.tol,
    };
    let detect = DetectConfig {
        threshold: a.threshold,
        min_area: a.min_area,
        ..DetectConfig::blob()
    };
    let cfg = recon_chain_config(method, a.rate, a.acs, a.seed, cg, detect);
    let messages = read_dataset_messages(&a.input)?;
    let items = run_chain(build_chain(&cfg)?, messages);

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut detections: Vec<Detection> = Vec::new();
    let mut metrics: Option<MetricsDocument> = None;
    for item in items {
        match item {
            Item::Image(r) => write_pgm(&a.out.join(slice_file_name(r.image.slice_index)), &r.image)?,
            Item::Detections { detections: d, .. } => detections.extend(d),
            Item::Metrics(m) => metrics = Some(m),
            Item::Failure(msg) => bail!("reconstruction failed: {msg}"),
            _ => {}
        }
    }
    let metrics = metrics.context("chain ended without metrics")?;
    write_file(&a.out.join(METRICS_FILE), metrics.to_json())?;
    write_file(&a.out.join(DETECTIONS_FILE), detections_to_json(&detections))?;
    println!(
        "{} slices, {} detections written to {}",
        metrics.slices.len(),
        detections.len(),
        a.out.display()
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let dets = load_external_detections(&read_file(&a.pred)?).with_context(|| a.pred.display().to_string())?;
    let gts = load_ground_truth(&read_file(&a.gt)?).with_context(|| a.gt.display().to_string())?;
    let metrics = match &a.ssim {
        Some(p) => Some(MetricsDocument::from_json(&read_file(p)?).with_context(|| p.display().to_string())?),
        None => None,
    };
    let cfg = EvaluationConfig {
        iou_threshold: a.iou,
        confidence_threshold: a.confidence,
    };
    let report = evaluate(metrics.as_ref(), &dets, &gts, &cfg)?;
    write_file(&a.out, report.to_json())?;
    println!(
        "tp {} fp {} fn {} sensitivity {}",
        report.tp,
        report.fp,
        report.fn_,
        report.sensitivity.map_or("n/a".to_string(), |s| format!("{s:.4}"))
    );
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("KSP_LOG", "error");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Parses `args` (program name first) and runs the subcommand; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Serve(a) => serve(a),
        Command::Send(a) => send(a),
        Command::Recon(a) => recon(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

/// Report text a chain produced, if any.
pub fn report_text(items: &[Item]) -> Option<&str> {
    items.iter().find_map(|i| match i {
        Item::Message(GadgetMessage::Report(r)) => Some(r.as_str()),
        _ => None,
    })
}
