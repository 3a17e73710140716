//! The `spleenlen` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{
    run_experiment, write_results, ExperimentConfig, FitRequest, Fitted, Grouping, Learner, Method, NetworkLearner,
    NetworkSettings, Stage, DECAY_GRID,
};
use crate::metrics;
use crate::models::{self, Architecture, ModelBundle, RegressorConfig, UNetConfig, VggConfig};
use crate::phantom::{generate, read_dataset, write_dataset, PhantomConfig, Sample};
use crate::pipeline::{measure_image, OracleSegmenter, Segmenter, ThresholdSegmenter, UNetSegmenter};
use crate::preprocess::io::{read_image, read_mask, write_image, BitDepth};
use crate::preprocess::{inpaint_biharmonic, AugmentationSpec};
use crate::tensor::gradient_suite;
use crate::training::{write_loss_curve, write_sidecar, PAPER_LEARNING_RATE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Name of the resolved-settings log written next to command outputs.
pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "spleenlen", version, about = "Spleen length estimation on ultrasound-like images")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (or file for `inpaint` and `describe`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the published training settings instead of desk-scale defaults.
    #[arg(long, global = true)]
    pub paper_faithful: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset.
    Phantom(PhantomArgs),
    /// Train one network on a dataset.
    Train(TrainArgs),
    /// Segment and measure every case of a dataset.
    Measure(MeasureArgs),
    /// Nested cross-validation of the length estimators.
    Crossval(CrossvalArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Fill masked pixels of an image by biharmonic inpainting.
    Inpaint(InpaintArgs),
    /// Per-layer parameter table of an architecture.
    Describe(DescribeArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Spleen-to-fat intensity drop.
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub speckle: Option<f64>,
    /// Burn caliper marks at the length endpoints.
    #[arg(long)]
    pub calipers: bool,
    /// Noise-free, high-contrast phantoms with one case per patient.
    #[arg(long)]
    pub clean: bool,
}

#[derive(Debug, Clone, Args, Default)]
pub struct NetworkArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate for every method.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub fc_nodes: Option<usize>,
    #[arg(long)]
    pub vgg_divisor: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "SB")]
    pub method: Method,
    /// Trained segmentation checkpoint whose encoder starts a DEW model.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-7)]
    pub weight_decay: f64,
    #[command(flatten)]
    pub net: NetworkArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Unet,
    Threshold,
    /// Ground-truth masks from the dataset.
    Oracle,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "unet")]
    pub backend: Backend,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Inpaint annotation marks before segmenting.
    #[arg(long)]
    pub inpaint: bool,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    /// Dataset directory; without it, phantoms are generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Phantoms to generate when no dataset is given.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub grouping: Option<Grouping>,
    #[arg(long, value_delimiter = ',')]
    pub decays: Option<Vec<f64>>,
    #[arg(long)]
    pub inner_epochs: Option<usize>,
    #[arg(long)]
    pub sb_lr: Option<f64>,
    #[arg(long)]
    pub regressor_lr: Option<f64>,
    #[command(flatten)]
    pub net: NetworkArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Pixel spacing in mm.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchChoice {
    Unet,
    Regressor,
    Vgg,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long, value_enum, default_value = "unet")]
    pub arch: ArchChoice,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[command(flatten)]
    pub net: NetworkArgs,
}

/// Settings that may come from a JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub paper_faithful: Option<bool>,
    pub phantom: Option<PhantomConfig>,
    pub network: Option<NetworkSettings>,
    pub experiment: Option<ExperimentConfig>,
}

impl FileConfig {
    /// Parse a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.out, &mut cfg.data].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Everything a command needs after merging defaults, file and flags.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub paper_faithful: bool,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub phantom: PhantomConfig,
    pub network: NetworkSettings,
    pub experiment: ExperimentConfig,
}

/// The published training settings.
pub fn paper_network_settings() -> NetworkSettings {
    NetworkSettings {
        unet: UNetConfig::paper(),
        fc_nodes: 256,
        vgg_divisor: 1,
        epochs: crate::training::DEFAULT_EPOCHS,
        inner_epochs: None,
        batch_size: crate::training::DEFAULT_BATCH_SIZE,
        sb_learning_rate: PAPER_LEARNING_RATE,
        regressor_learning_rate: PAPER_LEARNING_RATE,
        augmentation: Some(AugmentationSpec::positive_rotations_only()),
        threshold: 0.5,
        freeze_transferred: false,
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

impl NetworkArgs {
    fn apply(&self, s: &mut NetworkSettings) {
        if let Some(v) = self.epochs {
            s.epochs = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.lr {
            s.sb_learning_rate = v;
            s.regressor_learning_rate = v;
        }
        if let Some(v) = self.base_channels {
            s.unet.base_channels = v;
        }
        if let Some(v) = self.depth {
            s.unet.depth = v;
        }
        if let Some(v) = self.fc_nodes {
            s.fc_nodes = v;
        }
        if let Some(v) = self.vgg_divisor {
            s.vgg_divisor = v;
        }
        if self.no_augment {
            s.augmentation = None;
        }
    }
}

fn resolve(cli: &Cli, file: FileConfig) -> Result<RunConfig> {
    let paper = cli.common.paper_faithful || file.paper_faithful.unwrap_or(false);
    let seed = cli.common.seed.or(file.seed).unwrap_or(0);
    let mut network = file.network.unwrap_or_else(|| if paper { paper_network_settings() } else { NetworkSettings::default() });
    let mut experiment = file.experiment.unwrap_or_default();
    if paper {
        experiment.decay_grid = DECAY_GRID.to_vec();
    }
    experiment.seed = seed;
    let mut phantom = file.phantom.unwrap_or_else(|| PhantomConfig::paper_like(seed));
    phantom.seed = seed;
    let mut data = file.data;
    let (name, default_out) = match &cli.command {
        Command::Phantom(a) => {
            if a.clean {
                phantom = PhantomConfig::clean(phantom.count, seed);
            }
            if let Some(v) = a.count {
                phantom.count = v;
                if a.patients.is_none() && phantom.patients.is_some_and(|p| p > v) {
                    phantom.patients = Some(v);
                }
            }
            if let Some(v) = a.patients {
                phantom.patients = Some(v);
            }
            if let Some(v) = a.height {
                phantom.height = v;
            }
            if let Some(v) = a.width {
                phantom.width = v;
            }
            if let Some(v) = a.contrast {
                phantom.contrast = v;
            }
            if let Some(v) = a.speckle {
                phantom.speckle = v;
            }
            phantom.calipers |= a.calipers;
            ("phantom", "phantoms")
        }
        Command::Train(a) => {
            a.net.apply(&mut network);
            data = a.data.clone().or(data);
            ("train", "model")
        }
        Command::Measure(a) => {
            data = a.data.clone().or(data);
            network.threshold = a.threshold;
            ("measure", "measurements")
        }
        Command::Crossval(a) => {
            a.net.apply(&mut network);
            if let Some(v) = a.inner_epochs {
                network.inner_epochs = Some(v);
            }
            if let Some(v) = a.sb_lr {
                network.sb_learning_rate = v;
            }
            if let Some(v) = a.regressor_lr {
                network.regressor_learning_rate = v;
            }
            if let Some(v) = &a.methods {
                experiment.methods = v.clone();
            }
            if let Some(v) = a.grouping {
                experiment.grouping = v;
            }
            if let Some(v) = &a.decays {
                experiment.decay_grid = v.clone();
            }
            if let Some(v) = a.count {
                phantom.count = v;
                if phantom.patients.is_some_and(|p| p > v) {
                    phantom.patients = Some(v);
                }
            }
            data = a.data.clone().or(data);
            ("crossval", "results")
        }
        Command::Gradcheck(_) => ("gradcheck", "gradcheck"),
        Command::Inpaint(_) => ("inpaint", "inpainted.png"),
        Command::Describe(a) => {
            a.net.apply(&mut network);
            ("describe", "-")
        }
    };
    let out = cli.common.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(default_out));
    let out = if out.as_os_str() == "-" { out } else { absolute(&out)? };
    let data = data.map(|d| absolute(&d)).transpose()?;
    network.validate()?;
    experiment.validate()?;
    Ok(RunConfig { command: name.to_string(), seed, paper_faithful: paper, data, out, phantom, network, experiment })
}

fn require_data(cfg: &RunConfig) -> Result<&Path> {
    cfg.data.as_deref().ok_or_else(|| Error::InvalidArgument(format!("`{}` needs --data", cfg.command)))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_phantom(cfg: &RunConfig) -> Result<()> {
    cfg.phantom.validate()?;
    let samples = generate(&cfg.phantom)?;
    write_dataset(&samples, &cfg.out, Some(cfg.seed))?;
    write_sidecar(&cfg.out.join(RUN_CONFIG_FILE), cfg)?;
    let lengths: Vec<f64> = samples.iter().map(|s| s.length_mm).collect();
    let patients: std::collections::BTreeSet<u64> = samples.iter().map(|s| s.patient_id).collect();
    let (lo, hi) = lengths.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "wrote {} cases from {} patients to {} (length {:.1}..{:.1} mm, mean {:.1} mm)",
        samples.len(),
        patients.len(),
        cfg.out.display(),
        lo,
        hi,
        lengths.iter().sum::<f64>() / lengths.len() as f64
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let samples = read_dataset(require_data(cfg)?)?;
    let train: Vec<&Sample> = samples.iter().collect();
    let learner = NetworkLearner::new(cfg.network.clone());
    let source = match (args.method, &args.encoder) {
        (Method::DEW, Some(path)) => {
            Some(Fitted { model: Some(ModelBundle::load(path)?), loss_curve: Vec::new(), transfer_verified: None })
        }
        (Method::DEW, None) => {
            return Err(Error::InvalidArgument("DEW training needs --encoder <segmentation checkpoint>".into()))
        }
        (_, Some(_)) => return Err(Error::InvalidArgument("--encoder only applies to DEW".into())),
        _ => None,
    };
    let req = FitRequest {
        method: args.method,
        stage: Stage::Outer,
        train: &train,
        weight_decay: args.weight_decay,
        seed: cfg.seed,
        encoder_source: source.as_ref(),
    };
    let fitted = learner.fit(&req)?;
    create_dir(&cfg.out)?;
    fitted.model.as_ref().expect("network learner returns a model").save(&cfg.out.join("model.ckpt"))?;
    write_loss_curve(&cfg.out.join("loss_curve.csv"), &fitted.loss_curve)?;
    write_sidecar(
        &cfg.out.join(RUN_CONFIG_FILE),
        &serde_json::json!({ "run": cfg, "method": args.method, "weight_decay": args.weight_decay }),
    )?;
    println!(
        "trained {} on {} cases for {} epochs; final loss {:.5}; wrote {}",
        args.method,
        samples.len(),
        fitted.loss_curve.len(),
        fitted.loss_curve.last().copied().unwrap_or(f64::NAN),
        cfg.out.join("model.ckpt").display()
    );
    Ok(())
}

fn cmd_measure(cfg: &RunConfig, args: &MeasureArgs) -> Result<()> {
    let samples = read_dataset(require_data(cfg)?)?;
    let segmenter: Box<dyn Segmenter> = match args.backend {
        Backend::Unet => {
            let path =
                args.checkpoint.as_ref().ok_or_else(|| Error::InvalidArgument("the unet backend needs --checkpoint".into()))?;
            Box::new(UNetSegmenter::new(ModelBundle::load(path)?, args.threshold)?)
        }
        Backend::Threshold => Box::new(ThresholdSegmenter::default()),
        Backend::Oracle => Box::new(OracleSegmenter),
    };
    use rayon::prelude::*;
    let measured: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let marks = if args.inpaint { s.annotations.as_ref() } else { None };
            measure_image(segmenter.as_ref(), &s.image, marks, Some(&s.mask))
                .map(|m| m.length_mm)
                .map_err(|e| Error::Case { case_id: s.case_id, message: e.to_string() })
        })
        .collect::<Result<_>>()?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("measurements.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["case_id", "length_mm"])?;
    for (s, l) in samples.iter().zip(&measured) {
        w.write_record([s.case_id.to_string(), format!("{l:.6}")])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let gt: Vec<f64> = samples.iter().map(|s| s.length_mm).collect();
    println!(
        "measured {} cases with the {} backend: PLE {:.2}% against the manifest; wrote {}",
        samples.len(),
        segmenter.name(),
        metrics::ple(&measured, &gt)?,
        path.display()
    );
    Ok(())
}

fn cmd_crossval(cfg: &RunConfig) -> Result<()> {
    let samples = match &cfg.data {
        Some(dir) => read_dataset(dir)?,
        None => {
            cfg.phantom.validate()?;
            generate(&cfg.phantom)?
        }
    };
    let learner = NetworkLearner::new(cfg.network.clone());
    let started = std::time::Instant::now();
    let outcome = run_experiment(&samples, &cfg.experiment, &learner as &dyn Learner)?;
    write_results(&outcome, &cfg.out)?;
    write_sidecar(&cfg.out.join(RUN_CONFIG_FILE), cfg)?;
    println!("{:<8}{:>10}{:>10}{:>10}{:>10}", "method", "PLE %", "R", "Dice", "HD mm");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    for r in &outcome.results {
        let rep = r.report.as_ref();
        println!(
            "{:<8}{:>10}{:>10}{:>10}{:>10}{}",
            r.method.name(),
            fmt(rep.map(|x| x.ple_percent)),
            fmt(rep.and_then(|x| x.pearson_r)),
            fmt(rep.and_then(|x| x.dice)),
            fmt(rep.and_then(|x| x.hausdorff_mm)),
            r.error.as_ref().map(|e| format!("  (partial: {e})")).unwrap_or_default()
        );
    }
    println!(
        "{} cases, {} train calls, leakage checks passed; {:.0} s; wrote {}",
        samples.len(),
        outcome.audit.train_calls,
        started.elapsed().as_secs_f64(),
        cfg.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs, seed: u64) -> Result<bool> {
    let rows = gradient_suite(args.instances.max(1), seed)?;
    println!("{:<20}{:>10}{:>14}{:>12}  result", "op", "instances", "max rel err", "tolerance");
    for r in &rows {
        println!(
            "{:<20}{:>10}{:>14.3e}{:>12.0e}  {}",
            r.op,
            r.instances,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(rows.iter().all(|r| r.passed))
}

fn cmd_inpaint(cfg: &RunConfig, args: &InpaintArgs) -> Result<()> {
    let spacing = crate::geometry::Spacing::isotropic(args.spacing)?;
    let image = read_image(&args.image, spacing)?;
    let mask = read_mask(&args.mask, spacing)?;
    let filled = inpaint_biharmonic(&image, &mask)?;
    if let Some(parent) = cfg.out.parent() {
        create_dir(parent)?;
    }
    write_image(&filled.clamp01(), &cfg.out, BitDepth::Sixteen)?;
    println!("inpainted {} pixels; wrote {}", mask.count(), cfg.out.display());
    Ok(())
}

fn cmd_describe(cfg: &RunConfig, args: &DescribeArgs) -> Result<()> {
    let f = 1usize << cfg.network.unet.depth.max(5);
    let hw = [args.height.unwrap_or(64).div_ceil(f) * f, args.width.unwrap_or(96).div_ceil(f) * f];
    let arch = match args.arch {
        ArchChoice::Unet => Architecture::UNet(cfg.network.unet.clone()),
        ArchChoice::Regressor => Architecture::EncoderRegressor(RegressorConfig {
            fc_nodes: cfg.network.fc_nodes,
            ..RegressorConfig::new(cfg.network.unet.clone(), hw)
        }),
        ArchChoice::Vgg => Architecture::Vgg(VggConfig {
            fc_nodes: cfg.network.fc_nodes,
            ..VggConfig::vgg19_narrow(hw, cfg.network.vgg_divisor)
        }),
    };
    let total = if cfg.out.as_os_str() == "-" {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        let t = models::describe(&arch, &mut lock)?;
        lock.flush().map_err(|e| Error::io("stdout", e))?;
        t
    } else {
        let file = fs::File::create(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        models::describe(&arch, file)?
    };
    eprintln!("{total} parameters");
    Ok(())
}

/// Validation problems exit with 2, everything else with 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Shape(_) | Error::UnknownParameter(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let file = match &cli.common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.common.threads.or(file.threads);
    let cfg = resolve(cli, file)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        match &cli.command {
            Command::Phantom(_) => cmd_phantom(&cfg)?,
            Command::Train(a) => cmd_train(&cfg, a)?,
            Command::Measure(a) => cmd_measure(&cfg, a)?,
            Command::Crossval(_) => cmd_crossval(&cfg)?,
            Command::Gradcheck(a) => {
                if !cmd_gradcheck(a, cfg.seed)? {
                    return Ok(EXIT_RUNTIME);
                }
            }
            Command::Inpaint(a) => cmd_inpaint(&cfg, a)?,
            Command::Describe(a) => cmd_describe(&cfg, a)?,
        }
        Ok(EXIT_OK)
    })
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
