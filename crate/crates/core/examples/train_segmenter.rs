//! Train a small U-Net on phantoms and measure held-out cases.
//!
//! cargo run --release --example train_segmenter -- [epochs] [base_channels] [lr]

use std::time::Instant;

use spleenlen::geometry::{measure_mask, BinaryMask};
use spleenlen::metrics::{dice_coefficient, ple};
use spleenlen::models::{build_unet, UNetConfig};
use spleenlen::phantom::{generate, PhantomConfig};
use spleenlen::training::{predict_probabilities, train_with, LossKind, OptimState, TrainExample, TrainPlan};

fn main() -> spleenlen::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let base: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let cfg = PhantomConfig { contrast: 0.2, ..PhantomConfig::paper_like(7) };
    let samples = generate(&cfg)?;
    let (train_set, test_set) = samples.split_at(72);
    let examples: Vec<TrainExample> = train_set.iter().map(TrainExample::from_sample).collect();

    let mut model = build_unet(UNetConfig { base_channels: base, ..UNetConfig::desk() }, 1)?;
    let mut plan = TrainPlan::new(LossKind::Dice, 1);
    plan.epochs = epochs;
    let mut optim = OptimState::adam(lr, 1e-7);
    let start = Instant::now();
    train_with(&mut model, &examples, &plan, &mut optim, |e, l| {
        println!("epoch {:>3}  dice loss {l:.4}  ({:.0}s)", e + 1, start.elapsed().as_secs_f64())
    })?;

    let tests: Vec<TrainExample> = test_set.iter().map(TrainExample::from_sample).collect();
    let images: Vec<_> = tests.iter().map(|t| &t.image).collect();
    let probs = predict_probabilities(&model, &images, 4)?;
    let (mut dice, mut pred, mut gt) = (0.0, vec![], vec![]);
    for (s, p) in test_set.iter().zip(&probs) {
        let m = BinaryMask::from_probabilities(s.mask.height(), s.mask.width(), p, 0.5, s.mask.spacing())?;
        dice += dice_coefficient(&m, &s.mask)?;
        pred.push(measure_mask(&m).map(|a| a.length_mm).unwrap_or(0.0));
        gt.push(s.length_mm);
    }
    println!("held-out dice {:.3}  PLE {:.2}%", dice / test_set.len() as f64, ple(&pred, &gt)?);
    Ok(())
}
