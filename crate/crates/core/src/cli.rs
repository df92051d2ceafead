//! Command-line front end. `run` parses arguments, does the work and maps
//! every failure to an exit code and a one-line `error[CODE]` message.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{load_bundle, synth_generate, validate_dir, write_bundle, DataError, SyntheticConfig, BUNDLE_VERSION};
use crate::diagnostics::{gradient_suite, LayerGradCheck};
use crate::eval::{evaluate, write_pr_csv, write_predictions, write_traces_csv, EvalError};
use crate::model::StagnetModel;
use crate::nn::CHECKPOINT_VERSION;
use crate::train::{
    cross_dataset_run, fit, kfold_run, load_checkpoint, predict_all, save_checkpoint, write_training_log, TrainConfig,
    TrainError,
};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "STAGNET_OUT";
/// Largest relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "stagnet", version, about = "Accident anticipation with spatio-temporal graph attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic feature bundle.
    Synth(SynthArgs),
    /// Check a bundle and report every failing video.
    Validate(ValidateArgs),
    /// Train one model on a whole bundle.
    Train(TrainArgs),
    /// Score a bundle with a checkpoint or a freshly initialized model.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Train on one bundle, evaluate on another.
    Xdataset(XdatasetArgs),
    /// Finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory [default: $STAGNET_OUT, else ./out].
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory to write the bundle into.
    #[arg(long)]
    out: PathBuf,
    /// Base preset.
    #[arg(long, default_value = "easy", value_parser = ["easy", "hard", "tiny"])]
    preset: String,
    /// JSON file with SyntheticConfig fields; applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    positives: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    visual_dim: Option<usize>,
    #[arg(long)]
    label_dim: Option<usize>,
    #[arg(long)]
    global_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    initial_risk: Option<f64>,
    #[arg(long)]
    miss_rate: Option<f64>,
    #[arg(long)]
    domain_shift: Option<f64>,
    #[arg(long)]
    world_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Also write the full report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Flags mirroring `TrainConfig`; each one overrides the config file.
#[derive(Debug, Args, Default)]
struct ConfigFlags {
    /// JSON TrainConfig to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// best_validation | last_epoch
    #[arg(long, value_parser = serde_value::<crate::train::Selection>)]
    selection: Option<crate::train::Selection>,
    /// all_frames | before_onset
    #[arg(long, value_parser = serde_value::<crate::model::LabelMode>)]
    label_mode: Option<crate::model::LabelMode>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    visual_embed: Option<usize>,
    #[arg(long)]
    label_embed: Option<usize>,
    #[arg(long)]
    object_hidden: Option<usize>,
    #[arg(long)]
    global_hidden: Option<usize>,
    #[arg(long)]
    frame_hidden: Option<usize>,
    #[arg(long)]
    classifier_hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    leaky_slope: Option<f64>,
    /// Frame-graph window k.
    #[arg(long)]
    window: Option<usize>,
    /// Temporal lag u.
    #[arg(long)]
    lag: Option<usize>,
    /// global | row_wise
    #[arg(long, value_parser = serde_value::<crate::graph::SpatialNorm>)]
    spatial_norm: Option<crate::graph::SpatialNorm>,
    /// log_weight | binary
    #[arg(long, value_parser = serde_value::<crate::nn::Coupling>)]
    coupling: Option<crate::nn::Coupling>,
    /// attention | uniform
    #[arg(long, value_parser = serde_value::<crate::nn::Aggregation>)]
    aggregation: Option<crate::nn::Aggregation>,
    #[arg(long)]
    use_lstm: Option<bool>,
    /// mean | max
    #[arg(long, value_parser = serde_value::<crate::model::Pooling>)]
    pooling: Option<crate::model::Pooling>,
    /// frame | video
    #[arg(long, value_parser = serde_value::<crate::eval::ApMode>)]
    ap_mode: Option<crate::eval::ApMode>,
    /// over_thresholds | best_threshold
    #[arg(long, value_parser = serde_value::<crate::eval::MttaMode>)]
    mtta_mode: Option<crate::eval::MttaMode>,
    /// exclude | zero
    #[arg(long, value_parser = serde_value::<crate::eval::MissPolicy>)]
    miss_policy: Option<crate::eval::MissPolicy>,
}

fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Trained checkpoint.
    #[arg(long, conflicts_with = "init_seed", required_unless_present = "init_seed")]
    checkpoint: Option<PathBuf>,
    /// Evaluate an untrained model initialized from this seed.
    #[arg(long)]
    init_seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Args)]
struct XdatasetArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    out: OutArg,
}

/// A failure with its stable code and exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub exit: i32,
    pub message: String,
}

impl CliError {
    fn new(code: &'static str, exit: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            exit,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new("E_USAGE", EXIT_USAGE, message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::Io { .. } => "E_IO",
            DataError::Config(_) => "E_CONFIG",
            DataError::Checksum { .. } => "E_CHECKSUM",
            _ => "E_DATA",
        };
        Self::new(code, EXIT_FAILURE, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = if matches!(e, EvalError::Io { .. }) { "E_IO" } else { "E_EVAL" };
        Self::new(code, EXIT_FAILURE, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) => "E_CONFIG",
            TrainError::Incompatible(_) => "E_INCOMPATIBLE",
            TrainError::Checkpoint(_) => "E_CHECKPOINT",
            TrainError::Io { .. } => "E_IO",
            TrainError::Eval(_) => "E_EVAL",
            _ => "E_TRAIN",
        };
        Self::new(code, EXIT_FAILURE, e.to_string())
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        Self::new("E_MODEL", EXIT_FAILURE, e.to_string())
    }
}

type CliResult = Result<(), CliError>;

/// Runs one invocation and returns its exit code. `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return EXIT_USAGE;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            e.exit
        }
    }
}

fn dispatch(command: Command, args: &[String]) -> CliResult {
    match command {
        Command::Synth(a) => synth(a, args),
        Command::Validate(a) => validate(a),
        Command::Train(a) => train(a, args),
        Command::Eval(a) => eval(a, args),
        Command::Crossval(a) => crossval(a, args),
        Command::Xdataset(a) => xdataset(a, args),
        Command::Gradcheck(a) => gradcheck(a, args),
    }
}

/// Written beside every command's outputs.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: &'a [String],
    config_hash: Option<String>,
    seed: Option<u64>,
    version: &'static str,
    bundle_format: u32,
    checkpoint_format: u32,
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("E_IO", EXIT_FAILURE, format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_run(dir: &Path, command: &str, args: &[String], config_hash: Option<String>, seed: Option<u64>) -> CliResult {
    write_json(
        &dir.join("run.json"),
        &RunManifest {
            command,
            args,
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            bundle_format: BUNDLE_VERSION,
            checkpoint_format: CHECKPOINT_VERSION,
        },
    )
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("E_CONFIG", EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn require_dir(path: &Path) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{} is not a directory", path.display())))
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{} does not exist", path.display())))
    }
}

fn synth(a: SynthArgs, args: &[String]) -> CliResult {
    let mut cfg = match a.preset.as_str() {
        "hard" => SyntheticConfig::hard(),
        "tiny" => SyntheticConfig::tiny(),
        _ => SyntheticConfig::easy(),
    };
    if let Some(path) = &a.config {
        require_file(path)?;
        let mut base = serde_json::to_value(&cfg).expect("config serializes");
        let over: serde_json::Value = read_json(path)?;
        if let (Some(b), Some(o)) = (base.as_object_mut(), over.as_object()) {
            b.extend(o.clone());
        }
        cfg = serde_json::from_value(base).map_err(|e| CliError::new("E_CONFIG", EXIT_FAILURE, format!("{}: {e}", path.display())))?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { cfg.$f = v; })* };
    }
    set!(
        dataset,
        positives,
        negatives,
        frames,
        fps,
        slots,
        visual_dim,
        label_dim,
        global_dim,
        noise,
        signal,
        initial_risk,
        miss_rate,
        domain_shift,
        world_seed,
        seed
    );
    let bundle = synth_generate(&cfg)?;
    write_bundle(&a.out, &bundle)?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    write_run(&a.out, "synth", args, None, Some(cfg.seed))?;
    println!(
        "wrote {} videos ({} positive) to {}",
        bundle.videos.len(),
        bundle.manifest.positives(),
        a.out.display()
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> CliResult {
    require_dir(&a.bundle)?;
    let report = validate_dir(&a.bundle)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    for issue in &report.manifest_issues {
        println!("manifest: {issue}");
    }
    for f in report.failures() {
        println!("{}: {}", f.id, f.reasons.join("; "));
    }
    println!("{}: {} passed, {} failed", report.dataset, report.passed(), report.failed());
    if report.is_valid() {
        Ok(())
    } else {
        Err(CliError::new(
            "E_VALIDATION",
            EXIT_FAILURE,
            format!("{} invalid videos, {} manifest issues", report.failed(), report.manifest_issues.len()),
        ))
    }
}

impl ConfigFlags {
    /// Config file (if any) with every given flag applied on top.
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => {
                require_file(path)?;
                read_json::<TrainConfig>(path)?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($target:expr; $($f:ident),*) => { $(if let Some(v) = self.$f { $target.$f = v; })* };
        }
        set!(c; lr, epochs, seed, folds, validation_fraction, selection, label_mode);
        set!(c.model; slots, visual_embed, label_embed, object_hidden, global_hidden, frame_hidden,
            classifier_hidden, heads, leaky_slope, window, lag, spatial_norm, coupling, aggregation, use_lstm, pooling);
        set!(c.eval; ap_mode, mtta_mode, miss_policy);
        Ok(c)
    }

    /// Resolved config with feature dims taken from the bundle.
    fn for_bundle(&self, m: &crate::data::Manifest) -> Result<TrainConfig, CliError> {
        let c = self.resolve()?.with_dims_of(m);
        c.validate()?;
        Ok(c)
    }
}

fn train(a: TrainArgs, args: &[String]) -> CliResult {
    require_dir(&a.bundle)?;
    let bundle = load_bundle(&a.bundle)?;
    let config = a.flags.for_bundle(&bundle.manifest)?;
    let dir = a.out.dir();
    create_dir(&dir)?;
    let out = fit(&bundle, &config)?;
    save_checkpoint(&dir.join("checkpoint.bin"), &out.model, &config)?;
    write_training_log(&dir.join("train_log.jsonl"), &out.log)?;
    write_json(&dir.join("config.json"), &config)?;
    write_run(&dir, "train", args, Some(config.hash()), Some(config.seed))?;
    let last = out.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs, kept epoch {}, final loss {:.5}; wrote {}",
        out.log.len(),
        out.selected_epoch,
        last.loss,
        dir.join("checkpoint.bin").display()
    );
    Ok(())
}

fn eval(a: EvalArgs, args: &[String]) -> CliResult {
    require_dir(&a.bundle)?;
    let bundle = load_bundle(&a.bundle)?;
    let (model, config) = match (&a.checkpoint, a.init_seed) {
        (Some(path), _) => {
            require_file(path)?;
            let (model, mut config) = load_checkpoint(path)?;
            config.check_dims(&bundle.manifest)?;
            let flags = &a.flags;
            if let Some(v) = flags.ap_mode {
                config.eval.ap_mode = v;
            }
            if let Some(v) = flags.mtta_mode {
                config.eval.mtta_mode = v;
            }
            if let Some(v) = flags.miss_policy {
                config.eval.miss_policy = v;
            }
            (model, config)
        }
        (None, Some(seed)) => {
            let mut config = a.flags.for_bundle(&bundle.manifest)?;
            config.seed = seed;
            (StagnetModel::new(config.model.clone(), seed)?, config)
        }
        (None, None) => return Err(CliError::usage("eval needs --checkpoint or --init-seed")),
    };
    let dir = a.out.dir();
    create_dir(&dir)?;
    let preds = predict_all(&model, &bundle)?;
    let report = evaluate(&preds, config.eval)?;
    write_predictions(&dir.join("predictions.jsonl"), &preds)?;
    write_json(&dir.join("metrics.json"), &report)?;
    write_pr_csv(&dir.join("pr_curve.csv"), &report.pr_curve)?;
    write_traces_csv(&dir.join("traces.csv"), &preds)?;
    write_run(&dir, "eval", args, Some(config.hash()), Some(config.seed))?;
    println!(
        "AP {:.4} (baseline {:.4}), mTTA {:.3} s over {} videos",
        report.ap, report.baseline_ap, report.mtta, report.videos
    );
    Ok(())
}

fn crossval(a: CrossvalArgs, args: &[String]) -> CliResult {
    require_dir(&a.bundle)?;
    let bundle = load_bundle(&a.bundle)?;
    let config = a.flags.for_bundle(&bundle.manifest)?;
    let dir = a.out.dir();
    create_dir(&dir)?;
    let report = kfold_run(&bundle, &config)?;
    for (k, p) in report.predictions.iter().enumerate() {
        write_predictions(&dir.join(format!("predictions_fold{k}.jsonl")), p)?;
    }
    write_json(&dir.join("crossval.json"), &report)?;
    write_json(&dir.join("config.json"), &config)?;
    write_run(&dir, "crossval", args, Some(config.hash()), Some(config.seed))?;
    for f in &report.folds {
        println!("fold {}: AP {:.4} mTTA {:.3} s (epoch {})", f.fold, f.ap, f.mtta, f.selected_epoch);
    }
    println!("mean: AP {:.4} mTTA {:.3} s", report.mean_ap, report.mean_mtta);
    Ok(())
}

fn xdataset(a: XdatasetArgs, args: &[String]) -> CliResult {
    require_dir(&a.train)?;
    require_dir(&a.test)?;
    let train = load_bundle(&a.train)?;
    let test = load_bundle(&a.test)?;
    let config = a.flags.for_bundle(&train.manifest)?;
    let dir = a.out.dir();
    create_dir(&dir)?;
    let report = cross_dataset_run(&train, &test, &config)?;
    write_predictions(&dir.join("predictions.jsonl"), &report.predictions)?;
    write_json(&dir.join("xdataset.json"), &report)?;
    write_json(&dir.join("config.json"), &config)?;
    write_run(&dir, "xdataset", args, Some(config.hash()), Some(config.seed))?;
    println!(
        "{} -> {}: AP {:.4} (baseline {:.4}), mTTA {:.3} s",
        report.train_dataset, report.test_dataset, report.ap, report.baseline_ap, report.mtta
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs, args: &[String]) -> CliResult {
    if a.seeds == 0 {
        return Err(CliError::usage("--seeds must be positive"));
    }
    let mut checks: Vec<LayerGradCheck> = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        checks.extend(gradient_suite(seed).map_err(|e| CliError::new("E_GRADCHECK", EXIT_FAILURE, e.to_string()))?);
    }
    let dir = a.out.dir();
    create_dir(&dir)?;
    write_json(&dir.join("gradcheck.json"), &checks)?;
    write_run(&dir, "gradcheck", args, None, Some(a.seed))?;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for c in &checks {
        match worst.iter_mut().find(|(l, _)| *l == c.layer) {
            Some(w) => w.1 = w.1.max(c.max_rel_error),
            None => worst.push((&c.layer, c.max_rel_error)),
        }
    }
    for (layer, err) in &worst {
        println!("{layer:<18} {err:.3e}");
    }
    let failing: Vec<&str> = worst.iter().filter(|(_, e)| !(*e <= GRADCHECK_TOLERANCE)).map(|(l, _)| *l).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            "E_GRADCHECK",
            EXIT_FAILURE,
            format!("relative error above {GRADCHECK_TOLERANCE:e} in {}", failing.join(", ")),
        ))
    }
}
