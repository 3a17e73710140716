//! Measure spleen length from masks: ground-truth masks, a threshold
//! segmenter on noise-free phantoms, and the effect of caliper marks with and
//! without inpainting.
//!
//! cargo run --release --example measure_lengths -- [count] [seed]

use spleenlen::geometry::measure_mask;
use spleenlen::metrics::ple;
use spleenlen::phantom::{generate, PhantomConfig};
use spleenlen::pipeline::{measure_image, OracleSegmenter, ThresholdSegmenter};

fn main() -> spleenlen::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = PhantomConfig { calipers: true, ..PhantomConfig::clean(count, seed) };
    let samples = generate(&cfg)?;

    let first = &samples[0];
    let m = measure_mask(&first.mask)?;
    println!(
        "case 0: centroid ({:.1}, {:.1}) px, axis ({:.3}, {:.3}), length {:.1} mm (analytic {:.1} mm)",
        m.centroid[0], m.centroid[1], m.axis[0], m.axis[1], m.length_mm, first.length_mm
    );

    let gt: Vec<f64> = samples.iter().map(|s| s.length_mm).collect();
    let seg = ThresholdSegmenter::default();
    let mut rows: Vec<(&str, Vec<f64>)> = Vec::new();
    let mut oracle = Vec::new();
    let mut raw = Vec::new();
    let mut cleaned = Vec::new();
    for s in &samples {
        oracle.push(measure_image(&OracleSegmenter, &s.image, None, Some(&s.mask))?.length_mm);
        raw.push(measure_image(&seg, &s.image, None, None)?.length_mm);
        cleaned.push(measure_image(&seg, &s.image, s.annotations.as_ref(), None)?.length_mm);
    }
    rows.push(("ground-truth masks", oracle));
    rows.push(("threshold, calipers left in", raw));
    rows.push(("threshold, calipers inpainted", cleaned));
    for (name, pred) in rows {
        println!("{name:<32} PLE {:.2}%", ple(&pred, &gt)?);
    }
    Ok(())
}
