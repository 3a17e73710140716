//! Train a segmentation U-Net briefly, move its encoder into a length
//! regressor and fine-tune that regressor.
//!
//! cargo run --release --example transfer_encoder -- [epochs]

use spleenlen::experiment::{FitRequest, Learner, Method, NetworkLearner, NetworkSettings, Stage};
use spleenlen::metrics::ple;
use spleenlen::models::UNetConfig;
use spleenlen::phantom::{generate, PhantomConfig, Sample};

fn main() -> spleenlen::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let samples = generate(&PhantomConfig { count: 48, patients: Some(40), contrast: 0.2, ..PhantomConfig::paper_like(2) })?;
    let (train, test) = samples.split_at(36);
    let train: Vec<&Sample> = train.iter().collect();
    let test: Vec<&Sample> = test.iter().collect();

    let learner = NetworkLearner::new(NetworkSettings {
        unet: UNetConfig { base_channels: 4, ..UNetConfig::desk() },
        epochs,
        sb_learning_rate: 3e-3,
        regressor_learning_rate: 3e-3,
        ..NetworkSettings::default()
    });
    let fit = |method, seed, source| {
        learner.fit(&FitRequest { method, stage: Stage::Outer, train: &train, weight_decay: 1e-7, seed, encoder_source: source })
    };
    let sb = fit(Method::SB, 1, None)?;
    let req = FitRequest {
        method: Method::DEW,
        stage: Stage::Outer,
        train: &train,
        weight_decay: 1e-7,
        seed: 2,
        encoder_source: Some(&sb),
    };
    let start = learner.initial_model(&req)?;
    let src = sb.model.as_ref().expect("trained");
    let identical = src.encoder_param_names().iter().all(|n| {
        src.param(n).unwrap().data().iter().zip(start.param(n).unwrap().data()).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    println!("{} encoder tensors transferred, bit-identical: {identical}", src.encoder_param_names().len());

    let dew = fit(Method::DEW, 2, Some(&sb))?;
    let de = fit(Method::DE, 2, None)?;
    let gt: Vec<f64> = test.iter().map(|s| s.length_mm).collect();
    for (name, method, fitted) in [("SB", Method::SB, &sb), ("DE", Method::DE, &de), ("DEW", Method::DEW, &dew)] {
        let pred: Vec<f64> = learner.predict(method, fitted, &test)?.iter().map(|o| o.length_mm).collect();
        println!("{name:<4} held-out PLE {:.2}%", ple(&pred, &gt)?);
    }
    Ok(())
}
