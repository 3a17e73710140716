//! Nested three-fold cross-validation of SB, DE, DEW and VGG on phantoms.
//!
//! cargo run --release --example cross_validation -- --methods SB,DE --epochs 12 --inner-epochs 6

use std::time::Instant;

use clap::Parser;
use spleenlen::experiment::{run_experiment, write_results, ExperimentConfig, Grouping, Method, NetworkLearner, NetworkSettings};
use spleenlen::models::UNetConfig;
use spleenlen::phantom::{generate, PhantomConfig};

#[derive(Parser)]
struct Opts {
    #[arg(long, default_value_t = 108)]
    count: usize,
    /// Spleen-to-fat contrast of the phantoms.
    #[arg(long, default_value_t = 0.2)]
    contrast: f64,
    #[arg(long, default_value_t = 0)]
    phantom_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "SB,DE,DEW,VGG")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 6)]
    inner_epochs: usize,
    #[arg(long, default_value_t = 4)]
    base_channels: usize,
    #[arg(long, default_value_t = 16)]
    vgg_divisor: usize,
    #[arg(long, default_value_t = 3e-3)]
    sb_lr: f64,
    #[arg(long, default_value_t = 3e-3)]
    regressor_lr: f64,
    #[arg(long, value_delimiter = ',', default_value = "1e-6,1e-7,1e-8")]
    decays: Vec<f64>,
    #[arg(long, default_value = "by-patient")]
    grouping: Grouping,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

fn main() -> spleenlen::Result<()> {
    let o = Opts::parse();
    let samples = generate(&PhantomConfig {
        count: o.count,
        contrast: o.contrast,
        patients: Some(o.count * 93 / 108),
        ..PhantomConfig::paper_like(o.phantom_seed)
    })?;
    let settings = NetworkSettings {
        unet: UNetConfig { base_channels: o.base_channels, ..UNetConfig::desk() },
        vgg_divisor: o.vgg_divisor,
        epochs: o.epochs,
        inner_epochs: Some(o.inner_epochs),
        sb_learning_rate: o.sb_lr,
        regressor_learning_rate: o.regressor_lr,
        ..NetworkSettings::default()
    };
    let cfg = ExperimentConfig {
        methods: o.methods,
        grouping: o.grouping,
        seed: o.seed,
        decay_grid: o.decays,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let outcome = run_experiment(&samples, &cfg, &NetworkLearner::new(settings))?;
    for r in &outcome.results {
        match &r.report {
            Some(rep) => println!(
                "{:<4} PLE {:>6.2}%  R {:>6.3}  Dice {}  HD {}  decays {:?}",
                r.method.name(),
                rep.ple_percent,
                rep.pearson_r.unwrap_or(f64::NAN),
                rep.dice.map(|d| format!("{d:.3}")).unwrap_or("-".into()),
                rep.hausdorff_mm.map(|d| format!("{d:.2} mm")).unwrap_or("-".into()),
                r.chosen_decay
            ),
            None => println!("{:<4} failed: {}", r.method.name(), r.error.as_deref().unwrap_or("")),
        }
    }
    println!("{} train calls in {:.0} s", outcome.audit.train_calls, start.elapsed().as_secs_f64());
    if let Some(dir) = o.out {
        write_results(&outcome, &dir)?;
    }
    Ok(())
}
