use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Physical pixel size in millimetres, `(row spacing, column spacing)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub sy: f64,
    pub sx: f64,
}

impl Spacing {
    pub fn new(sy: f64, sx: f64) -> Result<Self> {
        ensure!(
            sy > 0.0 && sx > 0.0 && sy.is_finite() && sx.is_finite(),
            InvalidArgument,
            "pixel spacing must be positive, got ({sy}, {sx})"
        );
        Ok(Self { sy, sx })
    }

    pub fn isotropic(s: f64) -> Result<Self> {
        Self::new(s, s)
    }

    pub fn unit() -> Self {
        Self { sy: 1.0, sx: 1.0 }
    }
}

/// Row-major boolean mask of spleen pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    spacing: Spacing,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, spacing: Spacing) -> Self {
        Self { height, width, bits: vec![false; height * width], spacing }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>, spacing: Spacing) -> Result<Self> {
        ensure!(bits.len() == height * width, Shape, "{height}x{width} mask needs {} bits, got {}", height * width, bits.len());
        Ok(Self { height, width, bits, spacing })
    }

    /// Builds a mask from a predicate on `(row, col)`.
    pub fn from_fn(height: usize, width: usize, spacing: Spacing, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, bits, spacing }
    }

    /// Thresholds values (e.g. sigmoid probabilities) at `threshold` (inclusive).
    pub fn from_probabilities(height: usize, width: usize, probs: &[f64], threshold: f64, spacing: Spacing) -> Result<Self> {
        Self::from_bits(height, width, probs.iter().map(|&p| p >= threshold).collect(), spacing)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixels as `(row, col)` in scan order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i / self.width, i % self.width))
    }

    /// Foreground pixels with a 4-neighbour outside the mask or the image.
    pub fn boundary_pixels(&self) -> Vec<(usize, usize)> {
        self.pixels()
            .filter(|&(r, c)| {
                r == 0
                    || c == 0
                    || r + 1 == self.height
                    || c + 1 == self.width
                    || !self.get(r - 1, c)
                    || !self.get(r + 1, c)
                    || !self.get(r, c - 1)
                    || !self.get(r, c + 1)
            })
            .collect()
    }

    pub fn same_grid(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Values 0.0 / 1.0 in row-major order.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}
