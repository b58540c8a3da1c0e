//! Command-line front end.
//!
//! ```text
//! sdarecon <prepare|train|recover|eval|phase-curve|bench|grad-check> [flags]
//! ```
//!
//! Exit status: 0 success, 1 usage, 2 data error, 3 numeric or validation
//! error.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::baseline::{sparse_haar_signal, HaarBasis, IstaConfig, IstaSolver, StepSize};
use crate::dataset::PatchDataset;
use crate::error::Error;
use crate::evaluation::{
    success_curve, time_recovery, write_curve, write_reports, RecoveryReport,
    DEFAULT_SUCCESS_THRESHOLD,
};
use crate::imaging::{central_crop, extract_patches, load_pgm, save_pgm, GrayImage};
use crate::measurement::{LinearOperator, UndersamplingRatio};
use crate::model::{load_model, save_model, Activation, LinearSda, NonlinearSda, SdaModel};
use crate::numeric::{Matrix, Prng, PRNG_ALGORITHM};
use crate::recovery::{
    ista_recover_rows, map_row_blocks, recover_image, sda_recover_rows, thread_count,
};
use crate::training::{
    finetune_observed, gradient_check, pretrain_stack, write_loss_trace, LossRecord, Phase,
    TrainConfig, TrainingSet,
};

const STREAM_OPERATOR: u64 = 0x0B5;
const STREAM_SKELETON: u64 = 0x5E1;
const STREAM_SIGNALS: u64 = 0x516;
const STREAM_CURVE_OPERATORS: u64 = 0xC00;
const GRAD_CHECK_BATCH: usize = 4;
const GRAD_CHECK_TOLERANCE: f64 = 1e-6;
const DEFAULT_TEST_STRIDE: usize = 16;
pub const DATASET_FILE: &str = "patches.sdap";
pub const MODEL_FILE: &str = "model.sdam";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Prepare,
    Train,
    Recover,
    Eval,
    PhaseCurve,
    Bench,
    GradCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    LSda,
    NlSda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Sda,
    Ista,
}

#[derive(Debug, Parser)]
#[command(
    name = "sdarecon",
    version,
    about = "Patch-based compressive-sensing recovery with stacked denoising autoencoders"
)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Model file (read by recover, eval, bench)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of PGM images (prepare, eval) or patch dataset (train)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Single PGM (recover, bench)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "l-sda")]
    arch: ArchArg,
    /// NL-SDA measurement activation
    #[arg(long = "measurement-activation", value_enum, default_value = "sigmoid")]
    measurement_activation: ActivationArg,
    #[arg(long, value_enum, default_value = "sda")]
    method: Method,
    /// Under-sampling ratio M/N
    #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
    delta: f64,
    #[arg(long = "patch-size", default_value_t = 32)]
    patch_size: usize,
    /// Patch stride [default: patch size for prepare, 16 otherwise]
    #[arg(long)]
    stride: Option<usize>,
    /// Central crop size, 0 to disable
    #[arg(long, default_value_t = 256)]
    crop: usize,
    #[arg(long = "lr", default_value_t = 0.01, allow_negative_numbers = true)]
    learning_rate: f64,
    #[arg(
        long = "pretrain-lr",
        default_value_t = 0.1,
        allow_negative_numbers = true
    )]
    pretrain_learning_rate: f64,
    #[arg(long = "batch-size", default_value_t = 32)]
    batch_size: usize,
    #[arg(long = "pretrain-epochs", default_value_t = 15)]
    pretrain_epochs: usize,
    #[arg(long = "finetune-epochs", default_value_t = 200)]
    finetune_epochs: usize,
    /// Corruption noise standard deviation
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    corruption: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long = "ista-iters", default_value_t = 100)]
    ista_iters: usize,
    /// ISTA step: "auto" or a positive number
    #[arg(long = "ista-step", default_value = "auto")]
    ista_step: String,
    /// Relative-error success threshold
    #[arg(long, default_value_t = DEFAULT_SUCCESS_THRESHOLD, allow_negative_numbers = true)]
    threshold: f64,
    /// Number of synthetic signals (phase-curve)
    #[arg(long, default_value_t = 100)]
    signals: usize,
    /// Sparsity fraction K/N (phase-curve)
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    sparsity: f64,
    /// Comma-separated deltas (phase-curve)
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    deltas: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Also measure patch-parallel throughput (bench)
    #[arg(long)]
    parallel: bool,
    /// Finite-difference step (grad-check)
    #[arg(
        long = "grad-step",
        default_value_t = 1e-5,
        allow_negative_numbers = true
    )]
    grad_step: f64,
}

/// Fully validated invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub model_path: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub input_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub architecture: ArchArg,
    pub measurement_activation: Activation,
    pub method: Method,
    pub delta: f64,
    /// `round(delta · patch_size²)`.
    pub m: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub crop: usize,
    pub train: TrainConfig,
    pub ista: IstaConfig,
    pub seed: u64,
    pub threshold: f64,
    pub signals: usize,
    pub sparsity: f64,
    pub deltas: Vec<f64>,
    pub repetitions: usize,
    pub parallel: bool,
    pub grad_step: f64,
}

impl RunConfig {
    pub fn n(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

#[derive(Debug)]
pub enum CliError {
    /// `--help` or `--version` output.
    Info(String),
    Usage(String),
    Failed {
        stage: &'static str,
        source: Error,
    },
    /// A check ran to completion but did not meet its tolerance.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 1,
            CliError::Failed { source, .. } => match source {
                Error::Io(_) | Error::Pgm(_) | Error::Model(_) | Error::Dataset(_) => 2,
                _ => 3,
            },
            CliError::Check(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Info(s) => f.write_str(s),
            CliError::Usage(s) => write!(f, "usage error: {s}"),
            CliError::Failed { stage, source } => write!(f, "{stage}: {source}"),
            CliError::Check(s) => f.write_str(s),
        }
    }
}

impl std::error::Error for CliError {}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T, E: Into<Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Failed {
            stage,
            source: e.into(),
        })
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses and validates `argv` (program name first).
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    })?;
    validate(args)
}

fn validate(a: Args) -> Result<RunConfig, CliError> {
    if !(a.delta > 0.0 && a.delta <= 1.0) {
        return Err(usage(format!(
            "--delta must lie in (0, 1], got {}",
            a.delta
        )));
    }
    if a.patch_size == 0 {
        return Err(usage("--patch-size must be >= 1"));
    }
    let stride = a.stride.unwrap_or(match a.command {
        Command::Prepare => a.patch_size,
        _ => DEFAULT_TEST_STRIDE.min(a.patch_size),
    });
    if stride == 0 || stride > a.patch_size {
        return Err(usage(format!(
            "--stride must lie in 1..={} (the patch size), got {stride}",
            a.patch_size
        )));
    }
    if a.crop != 0 && a.crop < a.patch_size {
        return Err(usage(format!(
            "--crop {} is smaller than --patch-size {}",
            a.crop, a.patch_size
        )));
    }
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(usage(format!("{name} must be > 0, got {v}")))
        }
    };
    positive("--lr", a.learning_rate)?;
    positive("--pretrain-lr", a.pretrain_learning_rate)?;
    positive("--lambda", a.lambda)?;
    positive("--threshold", a.threshold)?;
    positive("--grad-step", a.grad_step)?;
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be >= 1"));
    }
    if !(a.corruption >= 0.0 && a.corruption.is_finite()) {
        return Err(usage(format!(
            "--corruption must be >= 0, got {}",
            a.corruption
        )));
    }
    if a.ista_iters == 0 {
        return Err(usage("--ista-iters must be >= 1"));
    }
    let step = match a.ista_step.as_str() {
        "auto" => StepSize::Auto,
        s => match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => StepSize::Fixed(v),
            _ => {
                return Err(usage(format!(
                    "--ista-step must be \"auto\" or a positive number, got {s:?}"
                )))
            }
        },
    };
    if a.signals == 0 {
        return Err(usage("--signals must be >= 1"));
    }
    if !(a.sparsity > 0.0 && a.sparsity <= 1.0) {
        return Err(usage(format!(
            "--sparsity must lie in (0, 1], got {}",
            a.sparsity
        )));
    }
    if a.deltas.is_empty() || a.deltas.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(usage("--deltas must be values in (0, 1]"));
    }
    if a.deltas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--deltas must be strictly ascending"));
    }
    if a.repetitions < 3 {
        return Err(usage(format!(
            "--repetitions must be >= 3, got {}",
            a.repetitions
        )));
    }
    let needs_haar = a.command == Command::PhaseCurve
        || a.command == Command::Bench
        || (matches!(a.command, Command::Recover | Command::Eval) && a.method == Method::Ista);
    if needs_haar && (!a.patch_size.is_power_of_two() || a.patch_size < 2) {
        return Err(usage(format!(
            "--patch-size must be a power of two >= 2 for the Haar baseline, got {}",
            a.patch_size
        )));
    }

    let require = |flag: &str, v: &Option<PathBuf>| {
        v.clone()
            .ok_or_else(|| usage(format!("{flag} is required")))
    };
    match a.command {
        Command::Prepare | Command::Train => {
            require("--data", &a.data)?;
            require("--out", &a.out)?;
        }
        Command::Recover => {
            require("--input", &a.input)?;
            require("--out", &a.out)?;
            if a.method == Method::Sda {
                require("--model", &a.model)?;
            }
        }
        Command::Eval => {
            require("--data", &a.data)?;
            require("--out", &a.out)?;
            if a.method == Method::Sda {
                require("--model", &a.model)?;
            }
        }
        Command::Bench => {
            require("--input", &a.input)?;
            require("--model", &a.model)?;
            require("--out", &a.out)?;
        }
        Command::PhaseCurve | Command::GradCheck => {}
    }

    let n = a.patch_size * a.patch_size;
    let m = UndersamplingRatio::new(a.delta)
        .expect("checked")
        .measurements_for(n);
    Ok(RunConfig {
        command: a.command,
        model_path: a.model,
        data_dir: a.data,
        input_path: a.input,
        output_dir: a.out,
        architecture: a.arch,
        measurement_activation: match a.measurement_activation {
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Identity => Activation::Identity,
        },
        method: a.method,
        delta: a.delta,
        m,
        patch_size: a.patch_size,
        stride,
        crop: a.crop,
        train: TrainConfig {
            learning_rate: a.learning_rate,
            pretrain_learning_rate: a.pretrain_learning_rate,
            batch_size: a.batch_size,
            pretrain_epochs: a.pretrain_epochs,
            finetune_epochs: a.finetune_epochs,
            corruption_std: a.corruption,
            seed: a.seed,
        },
        ista: IstaConfig {
            lambda: a.lambda,
            max_iters: a.ista_iters,
            step,
        },
        seed: a.seed,
        threshold: a.threshold,
        signals: a.signals,
        sparsity: a.sparsity,
        deltas: a.deltas,
        repetitions: a.repetitions,
        parallel: a.parallel,
        grad_step: a.grad_step,
    })
}

/// Entry point used by the binary: parses, runs and maps the outcome to an
/// exit status, reporting errors on stderr.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = parse_args(argv).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(()) => 0,
        Err(CliError::Info(s)) => {
            print!("{s}");
            0
        }
        Err(e) => {
            eprintln!("sdarecon: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.command {
        Command::Prepare => prepare(cfg),
        Command::Train => train(cfg),
        Command::Recover => recover(cfg),
        Command::Eval => eval(cfg),
        Command::PhaseCurve => phase_curve(cfg),
        Command::Bench => bench(cfg),
        Command::GradCheck => grad_check(cfg),
    }
}

/// Seed of the sensing operator derived from the run seed.
pub fn operator_seed(seed: u64) -> u64 {
    Prng::new(seed).fork(STREAM_OPERATOR).next_u64()
}

// ---------------------------------------------------------------------------
// Manifest

/// Record of a run: configuration echo, seeds, input digests and start time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    pub config: Value,
    pub seeds: Value,
    pub inputs: Vec<InputDigest>,
    pub started_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        let data = fs::read(path)?;
        let digest = Sha256::digest(&data);
        Ok(InputDigest {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }
}

impl RunManifest {
    pub fn new(cfg: &RunConfig, inputs: &[PathBuf]) -> std::io::Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| InputDigest::of(p))
            .collect::<std::io::Result<_>>()?;
        Ok(RunManifest {
            command: cfg.command,
            config: config_json(cfg),
            seeds: json!({
                "seed": cfg.seed,
                "operator_seed": operator_seed(cfg.seed),
                "prng": PRNG_ALGORITHM,
            }),
            inputs,
            started_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "toolkit": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command_name(self.command),
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs.iter().map(|i| json!({
                "path": i.path,
                "bytes": i.bytes,
                "sha256": i.sha256,
            })).collect::<Vec<_>>(),
            "started_at": self.started_at,
        })
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }
}

fn command_name(c: Command) -> String {
    c.to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string()
}

fn config_json(cfg: &RunConfig) -> Value {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    json!({
        "model": path(&cfg.model_path),
        "data": path(&cfg.data_dir),
        "input": path(&cfg.input_path),
        "out": path(&cfg.output_dir),
        "arch": cfg.architecture.to_possible_value().map(|v| v.get_name().to_string()),
        "measurement_activation": format!("{:?}", cfg.measurement_activation).to_lowercase(),
        "method": cfg.method.to_possible_value().map(|v| v.get_name().to_string()),
        "delta": cfg.delta,
        "m": cfg.m,
        "n": cfg.n(),
        "patch_size": cfg.patch_size,
        "stride": cfg.stride,
        "crop": cfg.crop,
        "train": {
            "learning_rate": cfg.train.learning_rate,
            "pretrain_learning_rate": cfg.train.pretrain_learning_rate,
            "batch_size": cfg.train.batch_size,
            "pretrain_epochs": cfg.train.pretrain_epochs,
            "finetune_epochs": cfg.train.finetune_epochs,
            "corruption_std": cfg.train.corruption_std,
        },
        "ista": {
            "lambda": cfg.ista.lambda,
            "max_iters": cfg.ista.max_iters,
            "step": match cfg.ista.step {
                StepSize::Auto => json!("auto"),
                StepSize::Fixed(s) => json!(s),
            },
        },
        "threshold": cfg.threshold,
        "signals": cfg.signals,
        "sparsity": cfg.sparsity,
        "deltas": cfg.deltas,
        "repetitions": cfg.repetitions,
        "parallel": cfg.parallel,
        "grad_step": cfg.grad_step,
    })
}

/// Creates the output directory and writes the manifest into it.
fn start_run(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<Option<PathBuf>, CliError> {
    let Some(dir) = cfg.output_dir.clone() else {
        return Ok(None);
    };
    fs::create_dir_all(&dir).stage("output")?;
    RunManifest::new(cfg, inputs)
        .stage("manifest")?
        .write(&dir)
        .stage("manifest")?;
    Ok(Some(dir))
}

// ---------------------------------------------------------------------------
// Commands

/// PGM files of a directory in name order, or the path itself if it is a file.
fn pgm_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .stage("data")?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Failed {
            stage: "data",
            source: Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no .pgm files in {}", path.display()),
            )),
        });
    }
    Ok(files)
}

fn load_cropped(path: &Path, crop: usize) -> Result<GrayImage, CliError> {
    let img = load_pgm(path).stage("imaging")?;
    if crop == 0 {
        Ok(img)
    } else {
        central_crop(&img, crop).stage("imaging")
    }
}

fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let files = pgm_files(cfg.data_dir.as_deref().expect("validated"))?;
    let out = start_run(cfg, &files)?.expect("validated");
    let mut data = Vec::new();
    let mut count = 0;
    for f in &files {
        let img = load_cropped(f, cfg.crop)?;
        let batch = extract_patches(&img, cfg.patch_size, cfg.stride).stage("imaging")?;
        count += batch.len();
        for p in &batch.patches {
            data.extend_from_slice(p);
        }
    }
    let patches = Matrix::from_vec(count, cfg.n(), data).stage("imaging")?;
    let ds = PatchDataset::new(cfg.patch_size, patches).stage("dataset")?;
    ds.save(out.join(DATASET_FILE)).stage("dataset")?;
    println!(
        "prepared {count} patches of {0}x{0} from {1} images",
        cfg.patch_size,
        files.len()
    );
    Ok(())
}

fn dataset_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(DATASET_FILE)
    } else {
        data.to_path_buf()
    }
}

fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = dataset_path(cfg.data_dir.as_deref().expect("validated"));
    let out = start_run(cfg, std::slice::from_ref(&data))?.expect("validated");
    let ds = PatchDataset::load(&data).stage("dataset")?;
    if ds.patch_size != cfg.patch_size {
        return Err(CliError::Failed {
            stage: "dataset",
            source: Error::DimensionMismatch {
                what: "dataset patch size vs --patch-size",
                expected: cfg.patch_size,
                found: ds.patch_size,
            },
        });
    }
    let (n, m) = (cfg.n(), cfg.m);
    let mut records = Vec::new();
    let mut skeleton_rng = Prng::new(cfg.seed).fork(STREAM_SKELETON);
    let (model, operator): (SdaModel, Option<LinearOperator>) = match cfg.architecture {
        ArchArg::LSda => {
            let op =
                LinearOperator::gaussian(m, n, operator_seed(cfg.seed)).stage("measurement")?;
            let set = TrainingSet::measured(&op, ds.patches).stage("training")?;
            let skeleton = LinearSda::glorot(n, m, &mut skeleton_rng).stage("model")?;
            let model = fit(skeleton, &set, &cfg.train, &mut records)?;
            (model.into(), Some(op))
        }
        ArchArg::NlSda => {
            let set = TrainingSet::signals(ds.patches).stage("training")?;
            let skeleton =
                NonlinearSda::glorot(n, m, cfg.measurement_activation, &mut skeleton_rng)
                    .stage("model")?;
            (fit(skeleton, &set, &cfg.train, &mut records)?.into(), None)
        }
    };
    save_model(&model, operator.as_ref(), out.join(MODEL_FILE)).stage("model")?;
    let trace = File::create(out.join("loss_trace.csv")).stage("training")?;
    write_loss_trace(BufWriter::new(trace), &records).stage("training")?;
    let last = records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} (N={n}, M={m}); final training loss {last:.6}",
        model.architecture().name()
    );
    Ok(())
}

fn fit<N: crate::model::SdaNetwork>(
    skeleton: N,
    set: &TrainingSet,
    cfg: &TrainConfig,
    records: &mut Vec<LossRecord>,
) -> Result<N, CliError> {
    let (model, _) = pretrain_stack(skeleton, set, cfg, &mut |e| {
        records.push(LossRecord {
            epoch: e.epoch,
            phase: Phase::Pretrain(e.layer),
            loss: e.loss,
        })
    })
    .stage("training")?;
    let (model, _) = finetune_observed(model, set, cfg, &mut |epoch, loss| {
        records.push(LossRecord {
            epoch,
            phase: Phase::Finetune,
            loss,
        })
    })
    .stage("training")?;
    Ok(model)
}

fn load_checked_model(cfg: &RunConfig) -> Result<(SdaModel, Option<LinearOperator>), CliError> {
    let path = cfg.model_path.as_deref().expect("validated");
    let (model, op) = load_model(path).stage("model")?;
    if model.n() != cfg.n() {
        return Err(CliError::Failed {
            stage: "model",
            source: Error::DimensionMismatch {
                what: "model N vs patch_size²",
                expected: cfg.n(),
                found: model.n(),
            },
        });
    }
    Ok((model, op))
}

/// Recovery method prepared once for many images.
enum Recoverer {
    Sda {
        model: SdaModel,
        op: Option<LinearOperator>,
    },
    Ista {
        op: LinearOperator,
        basis: HaarBasis,
    },
}

impl Recoverer {
    fn build(
        cfg: &RunConfig,
        method: Method,
        model: Option<(SdaModel, Option<LinearOperator>)>,
    ) -> Result<Self, CliError> {
        match method {
            Method::Sda => {
                let (model, op) = model.expect("validated");
                Ok(Recoverer::Sda { model, op })
            }
            Method::Ista => {
                let op = match model {
                    Some((_, Some(op))) => op,
                    _ => LinearOperator::gaussian(cfg.m, cfg.n(), operator_seed(cfg.seed))
                        .stage("measurement")?,
                };
                let basis = HaarBasis::full(cfg.patch_size).stage("baseline")?;
                Ok(Recoverer::Ista { op, basis })
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Recoverer::Sda { model, .. } => model.architecture().name(),
            Recoverer::Ista { .. } => "ista",
        }
    }

    fn delta(&self) -> f64 {
        match self {
            Recoverer::Sda { model, .. } => model.m() as f64 / model.n() as f64,
            Recoverer::Ista { op, .. } => op.delta(),
        }
    }

    fn rows(&self, cfg: &RunConfig, patches: &Matrix, threads: usize) -> Result<Matrix, CliError> {
        match self {
            Recoverer::Sda { model, op } => map_row_blocks(patches, threads, |b| {
                sda_recover_rows(model, op.as_ref(), b)
            })
            .stage("model"),
            Recoverer::Ista { op, basis } => {
                let solver = IstaSolver::new(op, basis, cfg.ista).stage("baseline")?;
                map_row_blocks(patches, threads, |b| ista_recover_rows(&solver, op, b))
                    .stage("baseline")
            }
        }
    }

    /// Recovered image and the seconds spent in the solve.
    fn image(&self, cfg: &RunConfig, truth: &GrayImage) -> Result<(GrayImage, f64), CliError> {
        let batch = extract_patches(truth, cfg.patch_size, cfg.stride).stage("imaging")?;
        let patches = batch.to_matrix();
        let start = Instant::now();
        let out = self.rows(cfg, &patches, thread_count())?;
        let seconds = start.elapsed().as_secs_f64();
        let img = recover_image(truth, cfg.patch_size, cfg.stride, |_| Ok(out)).stage("imaging")?;
        Ok((img, seconds))
    }
}

fn recover(cfg: &RunConfig) -> Result<(), CliError> {
    let input = cfg.input_path.clone().expect("validated");
    let mut inputs = vec![input.clone()];
    inputs.extend(cfg.model_path.clone());
    let out = start_run(cfg, &inputs)?.expect("validated");
    let model = match &cfg.model_path {
        Some(_) => Some(load_checked_model(cfg)?),
        None => None,
    };
    let method = Recoverer::build(cfg, cfg.method, model)?;
    let truth = load_cropped(&input, cfg.crop)?;
    let (img, seconds) = method.image(cfg, &truth)?;
    save_pgm(&img, out.join("recovered.pgm")).stage("imaging")?;
    let report = RecoveryReport::evaluate(
        method.name(),
        method.delta(),
        &truth,
        &img,
        cfg.threshold,
        seconds,
    )
    .stage("evaluation")?;
    let file = File::create(out.join("report.csv")).stage("evaluation")?;
    write_reports(BufWriter::new(file), std::slice::from_ref(&report)).stage("evaluation")?;
    println!("{}", report.csv_row());
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let files = pgm_files(cfg.data_dir.as_deref().expect("validated"))?;
    let mut inputs = files.clone();
    inputs.extend(cfg.model_path.clone());
    let out = start_run(cfg, &inputs)?.expect("validated");
    let model = match &cfg.model_path {
        Some(_) => Some(load_checked_model(cfg)?),
        None => None,
    };
    let method = Recoverer::build(cfg, cfg.method, model)?;
    let mut reports = Vec::with_capacity(files.len());
    for f in &files {
        let truth = load_cropped(f, cfg.crop)?;
        let (img, seconds) = method.image(cfg, &truth)?;
        reports.push(
            RecoveryReport::evaluate(
                method.name(),
                method.delta(),
                &truth,
                &img,
                cfg.threshold,
                seconds,
            )
            .stage("evaluation")?,
        );
    }
    let file = File::create(out.join("reports.csv")).stage("evaluation")?;
    write_reports(BufWriter::new(file), &reports).stage("evaluation")?;
    let finite: Vec<f64> = reports.iter().filter_map(|r| r.psnr_db.db()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    println!(
        "evaluated {} images with {}; mean finite PSNR {mean:.3} dB",
        reports.len(),
        method.name()
    );
    Ok(())
}

fn phase_curve(cfg: &RunConfig) -> Result<(), CliError> {
    let out = start_run(cfg, &[])?;
    let basis = HaarBasis::full(cfg.patch_size).stage("baseline")?;
    let n = basis.size() * basis.size();
    let k = ((cfg.sparsity * n as f64).round() as usize).max(1);
    let mut rng = Prng::new(cfg.seed).fork(STREAM_SIGNALS);
    let signals = (0..cfg.signals)
        .map(|_| sparse_haar_signal(&basis, k, &mut rng).map(|(x, _)| x))
        .collect::<Result<Vec<_>, _>>()
        .stage("baseline")?;
    let ops = cfg
        .deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let m = UndersamplingRatio::new(d)?.measurements_for(n);
            LinearOperator::gaussian(
                m,
                n,
                Prng::new(cfg.seed)
                    .fork(STREAM_CURVE_OPERATORS + i as u64)
                    .next_u64(),
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .stage("measurement")?;
    let solvers = ops
        .iter()
        .map(|op| IstaSolver::new(op, &basis, cfg.ista))
        .collect::<Result<Vec<_>, _>>()
        .stage("baseline")?;
    let curve = success_curve(
        |delta, x| {
            let i = cfg
                .deltas
                .iter()
                .position(|&d| d == delta)
                .expect("delta from list");
            solvers[i].recover(&ops[i].measure(x)?)
        },
        &signals,
        &cfg.deltas,
        cfg.threshold,
    )
    .stage("evaluation")?;
    match out {
        Some(dir) => {
            let file = File::create(dir.join("curve.csv")).stage("evaluation")?;
            write_curve(BufWriter::new(file), &curve).stage("evaluation")?;
        }
        None => write_curve(std::io::stdout().lock(), &curve).stage("evaluation")?,
    }
    Ok(())
}

fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    let input = cfg.input_path.clone().expect("validated");
    let model_path = cfg.model_path.clone().expect("validated");
    let out = start_run(cfg, &[input.clone(), model_path])?.expect("validated");
    let loaded = load_checked_model(cfg)?;
    let truth = load_cropped(&input, cfg.crop)?;
    let batch = extract_patches(&truth, cfg.patch_size, cfg.stride).stage("imaging")?;
    let patches = batch.to_matrix();

    let mut modes = vec![1];
    if cfg.parallel {
        modes.push(thread_count());
    }
    let methods = [
        Recoverer::build(cfg, Method::Sda, Some(loaded.clone()))?,
        Recoverer::build(cfg, Method::Ista, Some(loaded))?,
    ];
    let mut reports = Vec::new();
    for (mode, &threads) in modes.iter().enumerate() {
        for method in &methods {
            let rows = method.rows(cfg, &patches, threads)?;
            let img =
                recover_image(&truth, cfg.patch_size, cfg.stride, |_| Ok(rows)).stage("imaging")?;
            let mut failure = None;
            let seconds = time_recovery(
                |p: &Matrix| {
                    if let Err(e) = method.rows(cfg, p, threads) {
                        failure.get_or_insert(e);
                    }
                },
                std::slice::from_ref(&patches),
                cfg.repetitions,
            )
            .stage("evaluation")?;
            if let Some(e) = failure {
                return Err(e);
            }
            let name = if mode == 0 {
                method.name().to_string()
            } else {
                format!("{}-parallel{threads}", method.name())
            };
            reports.push(
                RecoveryReport::evaluate(
                    name,
                    method.delta(),
                    &truth,
                    &img,
                    cfg.threshold,
                    seconds,
                )
                .stage("evaluation")?,
            );
        }
    }
    let file = File::create(out.join("bench.csv")).stage("evaluation")?;
    write_reports(BufWriter::new(file), &reports).stage("evaluation")?;
    let mut stdout = std::io::stdout().lock();
    for r in &reports {
        writeln!(stdout, "{}", r.csv_row()).stage("output")?;
    }
    let speedup = reports[1].recover_seconds / reports[0].recover_seconds.max(f64::MIN_POSITIVE);
    writeln!(
        stdout,
        "{} patches; ista {} iterations per patch; sda speedup {speedup:.1}x",
        patches.rows(),
        cfg.ista.max_iters
    )
    .stage("output")?;
    Ok(())
}

fn grad_check(cfg: &RunConfig) -> Result<(), CliError> {
    let out = start_run(cfg, &[])?;
    let (n, m) = (cfg.n(), cfg.m);
    let mut rng = Prng::new(cfg.seed);
    let signals = Matrix::from_vec(
        GRAD_CHECK_BATCH,
        n,
        (0..GRAD_CHECK_BATCH * n).map(|_| rng.next_f64()).collect(),
    )
    .stage("numeric")?;
    let err = match cfg.architecture {
        ArchArg::LSda => {
            let op =
                LinearOperator::gaussian(m, n, operator_seed(cfg.seed)).stage("measurement")?;
            let model = LinearSda::glorot(n, m, &mut rng).stage("model")?;
            let batch = TrainingSet::measured(&op, signals).stage("training")?;
            gradient_check(&model, &batch, cfg.grad_step).stage("training")?
        }
        ArchArg::NlSda => {
            let model =
                NonlinearSda::glorot(n, m, cfg.measurement_activation, &mut rng).stage("model")?;
            let batch = TrainingSet::signals(signals).stage("training")?;
            gradient_check(&model, &batch, cfg.grad_step).stage("training")?
        }
    };
    let line = format!("max_relative_error={err:.3e}");
    println!("{line}");
    if let Some(dir) = out {
        fs::write(dir.join("grad_check.txt"), format!("{line}\n")).stage("output")?;
    }
    if err > GRAD_CHECK_TOLERANCE {
        return Err(CliError::Check(format!(
            "gradient check failed: {err:.3e} exceeds {GRAD_CHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
