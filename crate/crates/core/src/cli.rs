//! Command-line front end: argument parsing, run directories and the five
//! subcommands.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde_json::json;

use crate::augment::{augment_image, item_rng};
use crate::config::{RunConfig, EFFECTIVE_CONFIG_FILE};
use crate::data::{load_dataset, split_train_val, write_png, Split};
use crate::error::{Error, Result};
use crate::init::{sample_neuron, InitScheme};
use crate::metrics::MetricsReport;
use crate::model::{build_network, evaluate, load_weights, save_weights, train, weights_checksum, TrainRun};
use crate::rng::{purpose, stream};

pub const WEIGHTS_FILE: &str = "model.ericnn";
pub const HISTORY_FILE: &str = "history.csv";
const LOCK_FILE: &str = ".ericnn.lock";

#[derive(Debug, Parser)]
#[command(name = "ericnn", version, about = "Slope-angle initialized CNN classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a class-folder dataset and save weights and history.
    Train(RunArgs),
    /// Evaluate saved weights on a held-out class-folder dataset.
    Eval(EvalArgs),
    /// Train with and without augmentation from identical initial weights.
    Ablate(AblateArgs),
    /// Sample initializer units and summarize their statistics.
    InitStats(InitStatsArgs),
    /// Write augmented copies of training images for inspection.
    AugmentPreview(PreviewArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    /// `eri` or `baseline`.
    #[arg(long)]
    pub init: Option<InitScheme>,
    /// Disable every augmentation transform.
    #[arg(long)]
    pub no_augment: bool,
    /// Any config key, e.g. `--set augment.rotation_max=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    /// Defaults, then the config file, then the seed environment variable,
    /// then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        c.apply_env()?;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            c.set(k.trim(), v.trim())?;
        }
        if let Some(v) = &self.data_root {
            c.data_root = v.clone();
        }
        if let Some(v) = &self.out_dir {
            c.out_dir = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.alpha_min {
            c.alpha_min = v;
        }
        if let Some(v) = self.init {
            c.init = v;
        }
        if self.no_augment {
            c.set("augment", "false")?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Root holding the class folders of the test set.
    #[arg(long)]
    pub test_dir: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Evaluate both arms here instead of on the validation split.
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct InitStatsArgs {
    #[arg(long, default_value_t = 10_000)]
    pub units: usize,
    /// Inputs per sampled unit.
    #[arg(long, default_value_t = 27)]
    pub fan_in: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// Training images to preview.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Augmented variants per image.
    #[arg(long, default_value_t = 4)]
    pub variants: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Exclusive claim on an output directory, released on drop.
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn claim(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let lock = path.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Usage(format!(
                    "{} is in use by another run (remove {} if stale)",
                    path.display(),
                    lock.display()
                )),
                _ => Error::io(format!("creating {}", lock.display()), e),
            })?;
        Ok(Self { path: path.to_path_buf(), lock })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path.join(name);
        fs::write(&p, contents).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
        Ok(p)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn open_run(config: &RunConfig) -> Result<RunDir> {
    let dir = RunDir::claim(&config.out_dir)?;
    dir.write(EFFECTIVE_CONFIG_FILE, config.to_text())?;
    Ok(dir)
}

pub struct TrainOutcome {
    pub run: TrainRun,
    pub weights: PathBuf,
}

/// Load, split, build, train; writes weights, history and the effective
/// config into `out_dir`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let dir = open_run(config)?;
    let (data, summary) = load_dataset(&config.data_root, &config.folders, Split::Train)?;
    info!("{summary}");
    let (tr, va) = split_train_val(&data, config.split_fraction, config.seed)?;
    let mut net = build_network(config.init, &config.interval()?, &tr, config.align_images, config.seed)?;
    let run = train(&mut net, &tr, &va, &config.train_config())?;
    let weights = dir.path().join(WEIGHTS_FILE);
    save_weights(&net, &weights)?;
    dir.write(HISTORY_FILE, run.history_csv())?;
    if let (Some(best), Some(last)) = (run.best_epoch(), run.final_epoch()) {
        info!(
            "best val acc {:.4} at epoch {}, final val acc {:.4}, {:.1?}",
            best.val_acc, best.epoch, last.val_acc, run.duration
        );
    }
    Ok(TrainOutcome { run, weights })
}

/// Evaluates saved weights on `test_dir`; writes `metrics.json` and
/// `metrics.txt`.
pub fn cmd_eval(config: &RunConfig, weights: &Path, test_dir: &Path) -> Result<MetricsReport> {
    let dir = open_run(config)?;
    let net = load_weights(weights)?;
    let (test, summary) = load_dataset(test_dir, &config.folders, Split::Test)?;
    info!("{summary}");
    let report = evaluate(&net, &test)?;
    let json = serde_json::to_string_pretty(&report.to_json()).expect("metrics serialize");
    dir.write("metrics.json", json + "\n")?;
    dir.write("metrics.txt", report.to_text())?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct AblationArm {
    pub name: &'static str,
    pub initial_checksum: u64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub evaluated_on: &'static str,
    pub arms: Vec<AblationArm>,
}

impl AblationReport {
    pub fn to_json(&self) -> serde_json::Value {
        let arms: Vec<_> = self
            .arms
            .iter()
            .map(|a| {
                json!({
                    "arm": a.name,
                    "initial_weights_checksum": a.initial_checksum,
                    "accuracy": a.report.accuracy,
                    "precision": a.report.precision,
                    "recall": a.report.recall,
                    "f1": a.report.f1,
                    "loss": a.report.mean_loss,
                })
            })
            .collect();
        json!({ "evaluated_on": self.evaluated_on, "arms": arms })
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24} {:>9} {:>10} {:>8} {:>9} {:>8}\n",
            "Arm", "Accuracy", "Precision", "Recall", "F1-score", "Loss"
        );
        for a in &self.arms {
            let r = &a.report;
            let _ = writeln!(
                s,
                "{:<24} {:>8.2}% {:>9.2}% {:>7.2}% {:>8.2}% {:>8.4}",
                a.name,
                100.0 * r.accuracy,
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1,
                r.mean_loss
            );
        }
        s
    }
}

/// Trains with and without augmentation from the same initial network and
/// evaluates both; writes `ablation.json` and `ablation.txt`.
pub fn cmd_ablate(config: &RunConfig, test_dir: Option<&Path>) -> Result<AblationReport> {
    let dir = open_run(config)?;
    let (data, _) = load_dataset(&config.data_root, &config.folders, Split::Train)?;
    let (tr, va) = split_train_val(&data, config.split_fraction, config.seed)?;
    let (holdout, evaluated_on) = match test_dir {
        Some(p) => (load_dataset(p, &config.folders, Split::Test)?.0, "test"),
        None => (va.clone(), "validation"),
    };
    let initial = build_network(config.init, &config.interval()?, &tr, config.align_images, config.seed)?;

    let mut with = config.clone();
    if !with.augment.any_enabled() {
        with.set("augment", "true")?;
    }
    let mut without = config.clone();
    without.set("augment", "false")?;

    let mut arms = Vec::new();
    for (name, cfg) in [("with_augmentation", &with), ("without_augmentation", &without)] {
        let mut net = initial.clone();
        let initial_checksum = weights_checksum(&net);
        info!("ablation arm {name}");
        train(&mut net, &tr, &va, &cfg.train_config())?;
        arms.push(AblationArm {
            name,
            initial_checksum,
            report: evaluate(&net, &holdout)?,
        });
    }
    let report = AblationReport { evaluated_on, arms };
    let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    dir.write("ablation.json", json + "\n")?;
    dir.write("ablation.txt", report.table())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitStatsSummary {
    pub units: usize,
    pub violations: usize,
    pub max_rotation_residual: f64,
    pub max_weight_residual: f64,
    pub max_abs_weight: f64,
    pub median_max_abs_weight: f64,
    /// Counts of `|alpha|` over ten equal bins spanning `(alpha_min, 90)`.
    pub histogram: Vec<usize>,
}

/// Samples `units` unaligned units with `fan_in` inputs; writes per-unit
/// rows to `init_stats.csv` and a summary to `init_stats.txt`. Any slope
/// outside the configured interval is an error.
pub fn cmd_init_stats(config: &RunConfig, units: usize, fan_in: usize) -> Result<InitStatsSummary> {
    let interval = config.interval()?;
    if units == 0 || fan_in == 0 {
        return Err(Error::Config("units and fan_in must be at least 1".into()));
    }
    let dir = open_run(config)?;
    let mut rng = stream(config.seed, &[purpose::INIT_STATS]);
    let mut csv = String::from("unit,alpha,normal_norm,w0,max_abs_weight\n");
    let lo = interval.alpha_min();
    let mut summary = InitStatsSummary {
        units,
        violations: 0,
        max_rotation_residual: 0.0,
        max_weight_residual: 0.0,
        max_abs_weight: 0.0,
        median_max_abs_weight: 0.0,
        histogram: vec![0; 10],
    };
    let mut maxima = Vec::with_capacity(units);
    for u in 0..units {
        let n = sample_neuron(fan_in, &interval, &mut rng)?;
        let _ = writeln!(csv, "{u},{},{},{},{}", n.alpha, n.normal_norm(), n.w0, n.max_abs_weight());
        let a = n.alpha.abs();
        if !interval.contains(n.alpha) {
            summary.violations += 1;
        } else {
            let bin = (((a - lo) / (90.0 - lo)) * 10.0) as usize;
            summary.histogram[bin.min(9)] += 1;
        }
        summary.max_rotation_residual = summary.max_rotation_residual.max(n.rotation_residual());
        summary.max_weight_residual = summary.max_weight_residual.max(n.weight_residual());
        maxima.push(n.max_abs_weight());
    }
    maxima.sort_by(f64::total_cmp);
    summary.max_abs_weight = *maxima.last().expect("units >= 1");
    summary.median_max_abs_weight = maxima[maxima.len() / 2];

    let mut txt = String::new();
    let _ = writeln!(txt, "units = {units}");
    let _ = writeln!(txt, "fan_in = {fan_in}");
    let _ = writeln!(txt, "alpha_min = {lo}");
    let _ = writeln!(txt, "violations = {}", summary.violations);
    let _ = writeln!(txt, "max_rotation_residual = {:e}", summary.max_rotation_residual);
    let _ = writeln!(txt, "max_weight_residual = {:e}", summary.max_weight_residual);
    let _ = writeln!(txt, "max_abs_weight = {}", summary.max_abs_weight);
    let _ = writeln!(txt, "median_max_abs_weight = {}", summary.median_max_abs_weight);
    let width = (90.0 - lo) / 10.0;
    for (i, c) in summary.histogram.iter().enumerate() {
        let from = lo + width * i as f64;
        let _ = writeln!(txt, "abs_alpha[{from:.1},{:.1}) = {c}", from + width);
    }
    dir.write("init_stats.csv", csv)?;
    dir.write("init_stats.txt", txt)?;
    if summary.violations > 0 {
        return Err(Error::Domain(format!(
            "{} slope angles fell outside the configured interval",
            summary.violations
        )));
    }
    Ok(summary)
}

/// Writes the first `count` training images and `variants` augmented
/// copies of each as PNGs under `out_dir/preview`.
pub fn cmd_augment_preview(config: &RunConfig, count: usize, variants: usize) -> Result<Vec<PathBuf>> {
    let dir = open_run(config)?;
    let (data, _) = load_dataset(&config.data_root, &config.folders, Split::Train)?;
    let preview = dir.path().join("preview");
    fs::create_dir_all(&preview).map_err(|e| Error::io(format!("creating {}", preview.display()), e))?;
    let spec = config.train_config().augment;
    let mut written = Vec::new();
    for (i, item) in data.items.iter().take(count).enumerate() {
        let p = preview.join(format!("{i:03}_original.png"));
        write_png(&item.image, &p)?;
        written.push(p);
        for v in 0..variants {
            let out = augment_image(&item.image, &spec, &mut item_rng(config.seed, v as u64, i))?;
            let p = preview.join(format!("{i:03}_aug{v}.png"));
            write_png(&out, &p)?;
            written.push(p);
        }
    }
    Ok(written)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let out = cmd_train(&a.resolve()?)?;
            println!("{}", out.weights.display());
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a.run.resolve()?, &a.weights, &a.test_dir)?;
            print!("{}", report.table());
        }
        Command::Ablate(a) => {
            let report = cmd_ablate(&a.run.resolve()?, a.test_dir.as_deref())?;
            print!("{}", report.table());
        }
        Command::InitStats(a) => {
            let s = cmd_init_stats(&a.run.resolve()?, a.units, a.fan_in)?;
            println!(
                "{} units, {} violations, max |w| {:.3}, max residuals {:.1e} / {:.1e}",
                s.units, s.violations, s.max_abs_weight, s.max_rotation_residual, s.max_weight_residual
            );
        }
        Command::AugmentPreview(a) => {
            let files = cmd_augment_preview(&a.run.resolve()?, a.count, a.variants)?;
            println!("wrote {} images", files.len());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
