//! Image → mask → length, with pluggable segmentation backends.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{measure_mask, BinaryMask};
use crate::models::{Architecture, ModelBundle};
use crate::preprocess::{inpaint_biharmonic, normalize_intensity, GrayImage};
use crate::training::predict_probabilities;

/// Produces a spleen mask from a normalized image.
pub trait Segmenter: Sync {
    fn name(&self) -> &'static str;
    /// `reference` is the ground-truth mask when one is available.
    fn segment(&self, image: &GrayImage, reference: Option<&BinaryMask>) -> Result<BinaryMask>;
}

/// A trained U-Net. Images whose sides are not multiples of `2^depth` are
/// zero-padded on the bottom and right and the output is cropped back.
#[derive(Debug, Clone)]
pub struct UNetSegmenter {
    model: ModelBundle,
    pub threshold: f64,
}

impl UNetSegmenter {
    pub fn new(model: ModelBundle, threshold: f64) -> Result<Self> {
        ensure!(matches!(model.arch(), Architecture::UNet(_)), InvalidArgument, "segmenter needs a U-Net checkpoint");
        ensure!((0.0..=1.0).contains(&threshold), InvalidArgument, "threshold {threshold} outside [0, 1]");
        Ok(Self { model, threshold })
    }

    pub fn model(&self) -> &ModelBundle {
        &self.model
    }
}

impl Segmenter for UNetSegmenter {
    fn name(&self) -> &'static str {
        "unet"
    }

    fn segment(&self, image: &GrayImage, _reference: Option<&BinaryMask>) -> Result<BinaryMask> {
        let Architecture::UNet(cfg) = self.model.arch() else { unreachable!("checked in new") };
        let padded = image.pad_to_multiple(1 << cfg.depth);
        let probs = predict_probabilities(&self.model, &[&padded], 1)?.remove(0);
        let full =
            GrayImage::new(padded.height(), padded.width(), probs, image.spacing())?.crop(image.height(), image.width())?;
        BinaryMask::from_probabilities(image.height(), image.width(), full.data(), self.threshold, image.spacing())
    }
}

/// Smoothed image thresholded at Otsu's level. A training-free baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSegmenter {
    /// Passes of a 3×3 box filter before thresholding.
    pub smoothing_passes: usize,
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        Self { smoothing_passes: 2 }
    }
}

fn box3(img: &GrayImage) -> GrayImage {
    let (h, w) = (img.height() as isize, img.width() as isize);
    GrayImage::from_fn(img.height(), img.width(), img.spacing(), |r, c| {
        let (mut sum, mut n) = (0.0, 0.0);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (y, x) = (r as isize + dr, c as isize + dc);
                if y >= 0 && x >= 0 && y < h && x < w {
                    sum += img.get(y as usize, x as usize);
                    n += 1.0;
                }
            }
        }
        sum / n
    })
}

/// Threshold maximising between-class variance over 256 bins of `[0, 1]`.
/// Single-valued input has no split and yields 1.0.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let mut hist = [0usize; 256];
    for &v in values {
        hist[((v.clamp(0.0, 1.0) * 255.0).round()) as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &n) in hist.iter().enumerate() {
        w0 += n as f64;
        sum0 += t as f64 * n as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    if best < 0.0 {
        return 1.0;
    }
    (best_t as f64 + 0.5) / 255.0
}

impl Segmenter for ThresholdSegmenter {
    fn name(&self) -> &'static str {
        "threshold"
    }

    fn segment(&self, image: &GrayImage, _reference: Option<&BinaryMask>) -> Result<BinaryMask> {
        let mut smooth = image.clone();
        for _ in 0..self.smoothing_passes {
            smooth = box3(&smooth);
        }
        let t = otsu_threshold(smooth.data());
        BinaryMask::from_bits(image.height(), image.width(), smooth.data().iter().map(|&v| v > t).collect(), image.spacing())
    }
}

/// Returns the reference mask unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn segment(&self, image: &GrayImage, reference: Option<&BinaryMask>) -> Result<BinaryMask> {
        let mask = reference.ok_or_else(|| Error::InvalidArgument("oracle segmentation needs a reference mask".into()))?;
        ensure!(
            mask.height() == image.height() && mask.width() == image.width(),
            Shape,
            "reference mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        );
        Ok(mask.clone())
    }
}

/// Result of measuring one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub length_mm: f64,
    pub length_px: f64,
    /// `false` when the segmentation came back empty; lengths are then 0.
    pub found: bool,
    #[serde(skip)]
    pub mask: Option<BinaryMask>,
}

/// Inpaint annotation marks (if given), normalize, segment, measure.
pub fn measure_image(
    segmenter: &dyn Segmenter,
    image: &GrayImage,
    annotations: Option<&BinaryMask>,
    reference: Option<&BinaryMask>,
) -> Result<Measurement> {
    let cleaned = match annotations {
        Some(marks) if !marks.is_empty() => inpaint_biharmonic(image, marks)?,
        _ => image.clone(),
    };
    let mask = segmenter.segment(&normalize_intensity(&cleaned), reference)?;
    match measure_mask(&mask) {
        Ok(m) => Ok(Measurement { length_mm: m.length_mm, length_px: m.length_px, found: true, mask: Some(mask) }),
        Err(Error::NoSpleenFound) => Ok(Measurement { length_mm: 0.0, length_px: 0.0, found: false, mask: Some(mask) }),
        Err(e) => Err(e),
    }
}
