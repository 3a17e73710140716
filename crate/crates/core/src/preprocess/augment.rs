use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::BinaryMask;
use crate::rng;

use super::{adaptive_equalize, gamma_correct, rotate_image, rotate_mask, GrayImage};
use super::{EQUALIZE_CLIP, EQUALIZE_TILES};

/// Largest rotation allowed when reproducing the original protocol.
pub const PAPER_MAX_ROTATION_DEG: f64 = 20.0;

/// Ranges for train-time augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Inclusive rotation range in degrees.
    pub rotation_deg: (f64, f64),
    pub gamma: (f64, f64),
    pub equalize_prob: f64,
    pub equalize_tiles: usize,
    pub equalize_clip: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            rotation_deg: (-PAPER_MAX_ROTATION_DEG, PAPER_MAX_ROTATION_DEG),
            gamma: (0.7, 1.5),
            equalize_prob: 0.5,
            equalize_tiles: EQUALIZE_TILES,
            equalize_clip: EQUALIZE_CLIP,
        }
    }
}

impl AugmentationSpec {
    /// Rotations in `[0, +20]` only, the literal reading of the protocol.
    pub fn positive_rotations_only() -> Self {
        Self { rotation_deg: (0.0, PAPER_MAX_ROTATION_DEG), ..Self::default() }
    }

    /// No-op augmentation.
    pub fn identity() -> Self {
        Self { rotation_deg: (0.0, 0.0), gamma: (1.0, 1.0), equalize_prob: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.rotation_deg;
        let (g0, g1) = self.gamma;
        ensure!(r0 <= r1 && r0.is_finite() && r1.is_finite(), InvalidArgument, "bad rotation range {r0}..{r1}");
        ensure!(g0 > 0.0 && g0 <= g1 && g1.is_finite(), InvalidArgument, "bad gamma range {g0}..{g1}");
        ensure!((0.0..=1.0).contains(&self.equalize_prob), InvalidArgument, "equalization probability outside [0, 1]");
        ensure!(self.equalize_tiles >= 1, InvalidArgument, "equalization needs at least one tile");
        ensure!(self.equalize_clip > 0.0 && self.equalize_clip <= 1.0, InvalidArgument, "clip outside (0, 1]");
        Ok(())
    }

    /// Additionally require rotations within ±20°.
    pub fn validate_paper_faithful(&self) -> Result<()> {
        self.validate()?;
        let m = self.rotation_deg.0.abs().max(self.rotation_deg.1.abs());
        ensure!(m <= PAPER_MAX_ROTATION_DEG, InvalidArgument, "rotation magnitude {m}° exceeds 20°");
        Ok(())
    }
}

/// The transform drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub gamma: f64,
    pub equalize: bool,
}

impl AugmentationSpec {
    /// Draw a transform from the stream identified by `key`.
    pub fn draw(&self, key: u64) -> AugmentParams {
        let mut r = rng::stream(key, &[]);
        let angle_deg = r.random_range(self.rotation_deg.0..=self.rotation_deg.1);
        let gamma = r.random_range(self.gamma.0..=self.gamma.1);
        let equalize = r.random::<f64>() < self.equalize_prob;
        AugmentParams { angle_deg, gamma, equalize }
    }
}

/// Apply `params`: rotation to image and mask together, intensity changes to
/// the image only.
pub fn apply_augmentation(
    image: &GrayImage,
    mask: Option<&BinaryMask>,
    params: &AugmentParams,
    spec: &AugmentationSpec,
) -> Result<(GrayImage, Option<BinaryMask>)> {
    let mut img = rotate_image(image, params.angle_deg);
    let mask = mask.map(|m| rotate_mask(m, params.angle_deg));
    if params.gamma != 1.0 {
        img = gamma_correct(&img, params.gamma)?;
    }
    if params.equalize {
        img = adaptive_equalize(&img, spec.equalize_tiles, spec.equalize_clip)?;
    }
    Ok((img, mask))
}

/// Draw and apply in one step. The same key always yields the same output.
pub fn augment(
    image: &GrayImage,
    mask: Option<&BinaryMask>,
    spec: &AugmentationSpec,
    key: u64,
) -> Result<(GrayImage, Option<BinaryMask>, AugmentParams)> {
    spec.validate()?;
    let params = spec.draw(key);
    let (img, m) = apply_augmentation(image, mask, &params, spec)?;
    Ok((img, m, params))
}
