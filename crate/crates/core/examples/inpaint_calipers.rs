//! Remove caliper marks from a phantom and write before/after images.
//!
//! cargo run --release --example inpaint_calipers -- [out_dir]

use std::path::PathBuf;

use spleenlen::phantom::{generate, PhantomConfig};
use spleenlen::preprocess::io::{write_image, write_mask, BitDepth};
use spleenlen::preprocess::{inpaint_biharmonic_with, InpaintOptions};

fn main() -> spleenlen::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "inpaint_demo".into()));
    std::fs::create_dir_all(&out).map_err(|e| spleenlen::Error::Io { path: out.clone(), source: e })?;
    let cfg = PhantomConfig { count: 1, patients: Some(1), calipers: true, ..PhantomConfig::paper_like(5) };
    let marked = generate(&cfg)?.remove(0);
    let clean = generate(&PhantomConfig { calipers: false, ..cfg })?.remove(0);
    let marks = marked.annotations.as_ref().expect("calipers requested");

    let (filled, stats) = inpaint_biharmonic_with(&marked.image, marks, InpaintOptions::default())?;
    let err = marks.pixels().map(|(r, c)| (filled.get(r, c) - clean.image.get(r, c)).abs()).fold(0.0, f64::max);
    println!("{} marked pixels, {} CG iterations, residual {:.1e}", marks.count(), stats.iterations, stats.residual);
    println!("largest deviation from the unmarked image inside the marks: {err:.3}");

    write_image(&marked.image, &out.join("marked.png"), BitDepth::Sixteen)?;
    write_image(&filled.clamp01(), &out.join("inpainted.png"), BitDepth::Sixteen)?;
    write_mask(marks, &out.join("marks.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
