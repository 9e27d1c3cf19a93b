//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 numeric failure, 4 params or
//! input incompatibility.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{local_stats_filter, FilterKind, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::image::{load_any, save_any};
use crate::metrics::{MetricReport, Region};
use crate::network::{load_params, NetworkParams};
use crate::speckle::{generate_dataset, Manifest};
use crate::trainer::{evaluate_manifest, Dataset, TrainConfig, Trainer, FINAL_PARAMS, TRAIN_LOG};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_INCOMPATIBLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "idcnn", version, about = "SAR image despeckling")]
pub struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress summaries and tables on standard output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a speckled training set and manifest from clean images.
    Simulate(SimulateArgs),
    /// Train the network on a manifest.
    Train(TrainArgs),
    /// Despeckle one image with trained parameters.
    Despeckle(DespeckleArgs),
    /// Full-reference metrics over a manifest, or ENL over image regions.
    Evaluate(EvaluateArgs),
    /// Noisy, Lee, Kuan and network metrics side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub looks: f64,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config; flags given here take priority.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub validation_manifest: Option<PathBuf>,
    #[arg(long)]
    pub looks: Option<f64>,
    #[arg(long)]
    pub lambda_tv: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many updates instead of whole epochs.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Center-crop every pair to this size.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Continue from a checkpoint (`.idcnn` with a sibling `.adam`).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DespeckleArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output image; a `.spkl` extension stores raw floats, anything else 8-bit PNG.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the estimated speckle field here.
    #[arg(long)]
    pub emit_noise: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Paired manifest for PSNR/SSIM/UQI.
    #[arg(long, conflicts_with = "image")]
    pub manifest: Option<PathBuf>,
    /// Score the network output instead of the noisy input.
    #[arg(long, requires = "manifest")]
    pub params: Option<PathBuf>,
    /// Image for ENL measurement (repeatable).
    #[arg(long)]
    pub image: Vec<PathBuf>,
    /// ENL region `x,y,w,h` (repeatable).
    #[arg(long, value_parser = parse_region)]
    pub region: Vec<Region>,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Write the report as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Looks assumed by Lee and Kuan (default: the manifest's first row).
    #[arg(long)]
    pub looks: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for a pipeline error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Io { .. } | Error::UnsupportedFormat { .. } | Error::CorruptFile(_) | Error::EmptyDataset(_) => {
            EXIT_IO
        }
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        Error::ShapeMismatch(_)
        | Error::VersionMismatch(_)
        | Error::UncalibratedBatchNorm
        | Error::TraceMismatch(_) => EXIT_INCOMPATIBLE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(&cli) {
        Ok(out) => {
            if !cli.quiet && !out.is_empty() {
                print!("{out}");
                let _ = std::io::stdout().flush();
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; returns the text meant for standard output.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train(a, cli.seed),
        Command::Despeckle(a) => despeckle(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
    }
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<String> {
    let s = generate_dataset(&a.input_dir, &a.output_dir, a.looks, a.size, seed)?;
    Ok(format!(
        "pairs: {}\nmanifest: {}\nspeckle mean: {:.6}\nspeckle variance: {:.6}\n",
        s.pairs,
        s.manifest.display(),
        s.speckle_mean,
        s.speckle_var
    ))
}

/// Config file (if any) with command-line overrides applied.
pub fn train_config(a: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = &a.$field {
                c.$field = v.clone();
            }
        )*};
    }
    apply!(manifest, looks, lambda_tv, learning_rate, batch_size, epochs, checkpoint_every, features, depth);
    if a.output_dir.is_some() {
        c.output_dir = a.output_dir.clone();
    }
    if a.validation_manifest.is_some() {
        c.validation_manifest = a.validation_manifest.clone();
    }
    if a.iterations.is_some() {
        c.iterations = a.iterations;
    }
    if a.crop.is_some() {
        c.crop = a.crop;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    if c.manifest.as_os_str().is_empty() {
        return Err(Error::InvalidArgument("no manifest given (--manifest or config)".into()));
    }
    if c.output_dir.is_none() {
        return Err(Error::InvalidArgument("no output directory given (--output-dir or config)".into()));
    }
    c.validate()?;
    Ok(c)
}

fn train(a: &TrainArgs, seed: Option<u64>) -> Result<String> {
    let config = train_config(a, seed)?;
    let out_dir = config.output_dir.clone().unwrap_or_default();
    let dataset = Dataset::from_manifest(&config.manifest, config.crop)?;
    let trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(config, dataset, ckpt)?,
        None => {
            let params = NetworkParams::init(config.architecture(), config.seed)?;
            Trainer::new(config, params, dataset)?
        }
    };
    let (_, log) = trainer.run()?;
    let mut s = String::new();
    if let (Some(first), Some(last)) = (log.iterations.first(), log.iterations.last()) {
        let _ = writeln!(s, "iterations: {}", last.iter);
        let _ = writeln!(s, "loss: {:.6} -> {:.6}", first.total, last.total);
    }
    if let Some((epoch, p)) = log.validation.last() {
        let _ = writeln!(s, "validation psnr (epoch {epoch}): {p:.3} dB");
    }
    let _ = writeln!(s, "params: {}", out_dir.join(FINAL_PARAMS).display());
    let _ = writeln!(s, "log: {}", out_dir.join(TRAIN_LOG).display());
    Ok(s)
}

fn despeckle(a: &DespeckleArgs) -> Result<String> {
    let params: NetworkParams<f32> = load_params(&a.params)?;
    let y = load_any(&a.input)?;
    let (xhat, noise) = params.despeckle_image(&y)?;
    save_any(&xhat, &a.output)?;
    if let Some(path) = &a.emit_noise {
        save_any(&noise, path)?;
    }
    Ok(format!("{}x{} -> {}\n", y.width(), y.height(), a.output.display()))
}

fn write_report(report: &MetricReport, csv: Option<&Path>) -> Result<String> {
    if let Some(path) = csv {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        report.write_csv(&mut f).map_err(|e| Error::io(path, e))?;
    }
    Ok(report.to_table())
}

fn evaluate(a: &EvaluateArgs) -> Result<String> {
    if !(a.peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be > 0, got {}", a.peak)));
    }
    let mut report = MetricReport::new(a.peak);
    if let Some(manifest) = &a.manifest {
        let manifest = Manifest::read(manifest)?;
        report = match &a.params {
            Some(p) => {
                let params: NetworkParams<f32> = load_params(p)?;
                evaluate_manifest(&manifest, a.peak, |y| Ok(params.despeckle_image(y)?.0))?
            }
            None => evaluate_manifest(&manifest, a.peak, |y| Ok(y.clone()))?,
        };
    } else {
        if a.image.is_empty() || a.region.is_empty() {
            return Err(Error::InvalidArgument(
                "give --manifest, or --image with at least one --region".into(),
            ));
        }
        for path in &a.image {
            let img = load_any(path)?;
            for &r in &a.region {
                report.add_enl(path.display().to_string(), &img, r)?;
            }
        }
    }
    write_report(&report, a.csv.as_deref())
}

/// Mean PSNR/SSIM/UQI per method over a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub peak: f64,
    pub methods: Vec<(String, MetricReport)>,
}

impl Comparison {
    pub const METHODS: [&'static str; 4] = ["Noisy", "Lee", "Kuan", "ID-CNN"];

    fn means(r: &MetricReport) -> [f64; 3] {
        [
            r.mean_psnr().unwrap_or(f64::NAN),
            r.mean_ssim().unwrap_or(f64::NAN),
            r.mean_uqi().unwrap_or(f64::NAN),
        ]
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        let names: Vec<&str> = self.methods.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(out, "metric,{}", names.join(","))?;
        for (i, metric) in ["psnr_db", "ssim", "uqi"].iter().enumerate() {
            let vals: Vec<String> = self
                .methods
                .iter()
                .map(|(_, r)| format!("{:.6}", Self::means(r)[i]))
                .collect();
            writeln!(out, "{metric},{}", vals.join(","))?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8}", "metric");
        for (n, _) in &self.methods {
            let _ = write!(s, "  {n:>9}");
        }
        s.push('\n');
        for (i, metric) in ["PSNR(dB)", "SSIM", "UQI"].iter().enumerate() {
            let _ = write!(s, "{metric:<8}");
            for (_, r) in &self.methods {
                let _ = write!(s, "  {:>9.4}", Self::means(r)[i]);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "(PSNR peak = {})", self.peak);
        s
    }
}

pub fn compare_methods(
    manifest: &Manifest,
    params: &NetworkParams<f32>,
    window: usize,
    looks: f64,
    peak: f64,
) -> Result<Comparison> {
    let noisy = evaluate_manifest(manifest, peak, |y| Ok(y.clone()))?;
    let lee = evaluate_manifest(manifest, peak, |y| local_stats_filter(y, window, looks, FilterKind::Lee))?;
    let kuan = evaluate_manifest(manifest, peak, |y| local_stats_filter(y, window, looks, FilterKind::Kuan))?;
    let net = evaluate_manifest(manifest, peak, |y| Ok(params.despeckle_image(y)?.0))?;
    let methods = Comparison::METHODS
        .iter()
        .map(|m| m.to_string())
        .zip([noisy, lee, kuan, net])
        .collect();
    Ok(Comparison { peak, methods })
}

fn compare(a: &CompareArgs) -> Result<String> {
    let manifest = Manifest::read(&a.manifest)?;
    let looks = match a.looks {
        Some(l) => l,
        None => manifest
            .rows
            .first()
            .map(|r| r.looks)
            .ok_or_else(|| Error::EmptyDataset(format!("{} has no rows", a.manifest.display())))?,
    };
    let params: NetworkParams<f32> = load_params(&a.params)?;
    let cmp = compare_methods(&manifest, &params, a.window, looks, a.peak)?;
    if let Some(path) = &a.csv {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        cmp.write_csv(&mut f).map_err(|e| Error::io(path, e))?;
    }
    Ok(cmp.to_table())
}
