//! Generate a phantom dataset and write it to disk.
//!
//! cargo run --example phantom_dataset -- [out_dir] [count] [seed]

use std::path::PathBuf;

use spleenlen::phantom::{generate, write_dataset, PhantomConfig};

fn main() -> spleenlen::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "phantoms".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(108);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut cfg = PhantomConfig::paper_like(seed);
    cfg.count = count;
    cfg.patients = Some(count.min(93).max(count.div_ceil(4)));
    let samples = generate(&cfg)?;
    write_dataset(&samples, &out, Some(seed))?;
    let lengths: Vec<f64> = samples.iter().map(|s| s.length_mm).collect();
    let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
    let (lo, hi) = lengths.iter().fold((f64::MAX, f64::MIN), |(a, b), &l| (a.min(l), b.max(l)));
    println!("{} cases written to {}", samples.len(), out.display());
    println!("length mm: mean {mean:.1}, range {lo:.1}..{hi:.1}");
    Ok(())
}
