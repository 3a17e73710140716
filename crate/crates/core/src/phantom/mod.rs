//! Synthetic ultrasound-like spleen images with known ground truth.
//!
//! A case is a bent ellipse at spleen intensity, wrapped in a darker fat
//! band, on a textured background, with multiplicative speckle and a depth
//! attenuation ramp. The ground-truth length comes from the continuous
//! outline, not from the rasterized mask.

mod dataset;
mod shape;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{measure_mask, BinaryMask, Spacing};
use crate::preprocess::GrayImage;
use crate::rng;

pub use dataset::{read_dataset, read_manifest, write_dataset, ManifestRow, MANIFEST_FILE};
pub use shape::{AnalyticLength, SpleenShape, BOUNDARY_SAMPLES};

/// Image sides must be multiples of this so the encoder can halve them four times.
pub const SIZE_MULTIPLE: usize = 16;
/// Attempts at placing a shape before giving up on a case.
pub const MAX_RETRIES: usize = 100;
/// Allowed disagreement between mask-measured and analytic length, px.
pub const SELF_CHECK_TOLERANCE_PX: f64 = 2.0;
pub const SPLEEN_LEVEL: f64 = 0.55;
/// Caliper cross half-width, px.
pub const CALIPER_ARM: usize = 3;
const MARGIN: f64 = (CALIPER_ARM + 3) as f64;

const STREAM_PATIENTS: u64 = 1;
const STREAM_PATIENT_SHAPE: u64 = 2;
const STREAM_CASE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub spacing: Spacing,
    /// Semi-major axis range, px.
    pub semi_major: (f64, f64),
    /// Semi-minor axis range, px.
    pub semi_minor: (f64, f64),
    pub bend: (f64, f64),
    /// Major-axis orientation range, degrees from the column axis.
    pub orientation_deg: (f64, f64),
    /// Intensity drop from spleen to the surrounding fat band.
    pub contrast: f64,
    /// Fat band thickness, px.
    pub band_px: f64,
    /// Variance of the mean-1 multiplicative speckle.
    pub speckle: f64,
    /// Amplitude of the smooth background texture.
    pub texture: f64,
    /// Fractional brightness loss from top to bottom.
    pub attenuation: f64,
    pub calipers: bool,
    pub count: usize,
    /// Distinct patients; `None` gives every case its own patient.
    pub patients: Option<usize>,
    pub max_per_patient: usize,
    /// Relative shape variation between images of one patient.
    pub patient_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 96,
            spacing: Spacing { sy: 2.0, sx: 2.0 },
            semi_major: (20.0, 30.0),
            semi_minor: (8.0, 12.0),
            bend: (0.0, 0.2),
            orientation_deg: (-25.0, 25.0),
            contrast: 0.15,
            band_px: 3.0,
            speckle: 0.05,
            texture: 0.05,
            attenuation: 0.25,
            calipers: false,
            count: 108,
            patients: Some(93),
            max_per_patient: 4,
            patient_jitter: 0.06,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// 108 images from 93 patients, at most 4 per patient.
    pub fn paper_like(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Noise-free, high-contrast, unbent shapes.
    pub fn clean(count: usize, seed: u64) -> Self {
        Self {
            bend: (0.0, 0.0),
            contrast: 0.4,
            speckle: 0.0,
            texture: 0.0,
            attenuation: 0.0,
            count,
            patients: None,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height.is_multiple_of(SIZE_MULTIPLE)
                && self.width.is_multiple_of(SIZE_MULTIPLE)
                && self.height > 0
                && self.width > 0,
            InvalidArgument,
            "image size {}x{} must be a positive multiple of {SIZE_MULTIPLE}",
            self.height,
            self.width
        );
        let (a0, a1) = self.semi_major;
        let (b0, b1) = self.semi_minor;
        ensure!(0.0 < b0 && b0 <= b1 && b1 < a0 && a0 <= a1, InvalidArgument, "need 0 < b-range < a-range");
        ensure!(
            2.0 * (a1 + MARGIN) <= self.width.max(self.height) as f64,
            InvalidArgument,
            "semi-major axis up to {a1} px does not fit a {}x{} image",
            self.height,
            self.width
        );
        ensure!(
            self.bend.0 >= 0.0 && self.bend.0 <= self.bend.1 && self.bend.1 < 1.0,
            InvalidArgument,
            "bend range must lie in [0, 1)"
        );
        ensure!(self.orientation_deg.0 <= self.orientation_deg.1, InvalidArgument, "empty orientation range");
        ensure!(self.contrast > 0.0 && self.contrast < SPLEEN_LEVEL, InvalidArgument, "contrast must lie in (0, {SPLEEN_LEVEL})");
        ensure!(
            self.speckle >= 0.0 && self.texture >= 0.0 && self.band_px >= 0.0,
            InvalidArgument,
            "noise levels must be non-negative"
        );
        ensure!((0.0..1.0).contains(&self.attenuation), InvalidArgument, "attenuation must lie in [0, 1)");
        ensure!(self.count >= 1, InvalidArgument, "count must be at least 1");
        ensure!(self.max_per_patient >= 1, InvalidArgument, "max_per_patient must be at least 1");
        if let Some(p) = self.patients {
            ensure!(
                p >= 1 && p <= self.count && self.count <= p * self.max_per_patient,
                InvalidArgument,
                "{} cases cannot be spread over {p} patients with at most {} each",
                self.count,
                self.max_per_patient
            );
        }
        Ok(())
    }
}

/// One generated case.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub case_id: u64,
    pub patient_id: u64,
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub length_mm: f64,
    pub length_px: f64,
    /// Pixels covered by burned-in caliper marks.
    pub annotations: Option<BinaryMask>,
}

/// Patient id of each case index.
pub fn assign_patients(cfg: &PhantomConfig) -> Vec<u64> {
    let Some(p) = cfg.patients else {
        return (0..cfg.count as u64).collect();
    };
    let mut r = rng::stream(cfg.seed, &[STREAM_PATIENTS]);
    let mut sizes = vec![1usize; p];
    for _ in p..cfg.count {
        let open: Vec<usize> = (0..p).filter(|&i| sizes[i] < cfg.max_per_patient).collect();
        sizes[open[r.random_range(0..open.len())]] += 1;
    }
    let mut ids: Vec<u64> = sizes.iter().enumerate().flat_map(|(i, &n)| std::iter::repeat_n(i as u64, n)).collect();
    ids.shuffle(&mut r);
    ids
}

fn uniform(r: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        r.random_range(range.0..range.1)
    }
}

/// Shape for a case: the patient's base shape with per-image jitter.
fn draw_shape(cfg: &PhantomConfig, patient: u64, case: u64, attempt: u64) -> SpleenShape {
    let mut pr = rng::stream(cfg.seed, &[STREAM_PATIENT_SHAPE, patient]);
    let a = uniform(&mut pr, cfg.semi_major);
    let b = uniform(&mut pr, cfg.semi_minor);
    let bend = uniform(&mut pr, cfg.bend);
    let angle = uniform(&mut pr, cfg.orientation_deg);

    let mut cr = rng::stream(cfg.seed, &[STREAM_CASE, case, attempt]);
    let j = cfg.patient_jitter;
    let jit = |r: &mut rand_chacha::ChaCha8Rng| if j > 0.0 { 1.0 + r.random_range(-j..j) } else { 1.0 };
    let a = (a * jit(&mut cr)).clamp(cfg.semi_major.0, cfg.semi_major.1);
    let b = (b * jit(&mut cr)).clamp(cfg.semi_minor.0, cfg.semi_minor.1);
    let bend = (bend * jit(&mut cr)).clamp(cfg.bend.0, cfg.bend.1);
    let angle = angle + if j > 0.0 { cr.random_range(-1.0..1.0) * 100.0 * j } else { 0.0 };
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let center = [h / 2.0 + cr.random_range(-0.15..0.15) * h, w / 2.0 + cr.random_range(-0.15..0.15) * w];
    SpleenShape { center, a, b, angle_deg: angle, bend }
}

fn fits(shape: &SpleenShape, cfg: &PhantomConfig) -> bool {
    let (r0, r1, c0, c1) = shape.bounds();
    r0 >= MARGIN && c0 >= MARGIN && r1 <= cfg.height as f64 - 1.0 - MARGIN && c1 <= cfg.width as f64 - 1.0 - MARGIN
}

/// Render the image of `shape` with noise drawn from `r`.
fn render(shape: &SpleenShape, cfg: &PhantomConfig, r: &mut impl Rng) -> Result<GrayImage> {
    let (h, w) = (cfg.height, cfg.width);
    let waves: Vec<[f64; 3]> = (0..3)
        .map(|_| [r.random_range(0.5..3.0), r.random_range(0.5..3.0), r.random_range(0.0..std::f64::consts::TAU)])
        .collect();
    let speckle = if cfg.speckle > 0.0 {
        Some(Gamma::new(1.0 / cfg.speckle, cfg.speckle).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let background = SPLEEN_LEVEL - 0.5 * cfg.contrast;
    let band = SPLEEN_LEVEL - cfg.contrast;
    let scale = shape.a.min(shape.b);
    let mut data = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (y, x) = (row as f64, col as f64);
            let rho = shape.radius(y, x);
            let base = if rho <= 1.0 {
                SPLEEN_LEVEL
            } else if (rho - 1.0) * scale <= cfg.band_px {
                band
            } else {
                let tex: f64 = waves
                    .iter()
                    .map(|[fy, fx, ph]| (std::f64::consts::TAU * (fy * y / h as f64 + fx * x / w as f64) + ph).sin())
                    .sum::<f64>()
                    / 3.0;
                background + cfg.texture * tex
            };
            let noise = speckle.as_ref().map_or(1.0, |g| g.sample(r));
            let depth = 1.0 - cfg.attenuation * y / (h - 1).max(1) as f64;
            data.push((base * noise * depth).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage::new(h, w, data, cfg.spacing)?.quantize16())
}

/// Bright `+` marks at both endpoints; returns the marked pixels.
pub fn burn_calipers(image: &mut GrayImage, endpoints: &[[f64; 2]; 2]) -> BinaryMask {
    let (h, w) = (image.height(), image.width());
    let mut marks = BinaryMask::new(h, w, image.spacing());
    for p in endpoints {
        let (cy, cx) = (p[0].round() as isize, p[1].round() as isize);
        let arm = CALIPER_ARM as isize;
        for d in -arm..=arm {
            for (y, x) in [(cy + d, cx), (cy, cx + d)] {
                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                    image.set(y as usize, x as usize, 1.0);
                    marks.set(y as usize, x as usize, true);
                }
            }
        }
    }
    marks
}

/// Generate one case. Pure function of the config and the case index.
pub fn generate_case(cfg: &PhantomConfig, case: u64, patient: u64) -> Result<Sample> {
    for attempt in 0..MAX_RETRIES as u64 {
        let shape = draw_shape(cfg, patient, case, attempt);
        if !fits(&shape, cfg) {
            continue;
        }
        let truth = shape.analytic_length(cfg.spacing);
        let mask = BinaryMask::from_fn(cfg.height, cfg.width, cfg.spacing, |r, c| shape.contains(r as f64, c as f64));
        let measured = measure_mask(&mask).map_err(|e| Error::Case { case_id: case, message: e.to_string() })?;
        if (measured.length_px - truth.length_px).abs() > SELF_CHECK_TOLERANCE_PX {
            return Err(Error::Case {
                case_id: case,
                message: format!("mask length {:.3} px disagrees with analytic {:.3} px", measured.length_px, truth.length_px),
            });
        }
        let mut noise = rng::stream(cfg.seed, &[STREAM_CASE, case, attempt, 1]);
        let mut image = render(&shape, cfg, &mut noise)?;
        let annotations = cfg.calipers.then(|| burn_calipers(&mut image, &truth.endpoints));
        return Ok(Sample {
            case_id: case,
            patient_id: patient,
            image,
            mask,
            length_mm: truth.length_mm,
            length_px: truth.length_px,
            annotations,
        });
    }
    Err(Error::Case { case_id: case, message: format!("shape did not fit the image after {MAX_RETRIES} attempts") })
}

/// Generate the whole dataset. The result does not depend on the number of
/// worker threads.
pub fn generate(cfg: &PhantomConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let patients = assign_patients(cfg);
    patients.par_iter().enumerate().map(|(i, &p)| generate_case(cfg, i as u64, p)).collect()
}
