use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::Spacing;

/// Row-major float64 grayscale image with physical pixel spacing.
///
/// Loaded and normalized images live in `[0, 1]`; intermediate results such
/// as an inpainted image may overshoot slightly and are only required to be
/// finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
    spacing: Spacing,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>, spacing: Spacing) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            Shape,
            "{height}x{width} image needs {} values, got {}",
            height * width,
            data.len()
        );
        ensure!(data.iter().all(|v| v.is_finite()), NonFinite, "image construction");
        Ok(Self { height, width, data, spacing })
    }

    pub fn filled(height: usize, width: usize, value: f64, spacing: Spacing) -> Self {
        Self { height, width, data: vec![value; height * width], spacing }
    }

    pub fn from_fn(height: usize, width: usize, spacing: Spacing, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data, spacing }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect(), spacing: self.spacing }
    }

    /// Clamp every value into `[0, 1]`.
    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Round to the nearest multiple of `1 / 65535`, the grid a 16-bit file stores.
    pub fn quantize16(&self) -> Self {
        self.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0)
    }

    /// Zero-pad on the bottom and right so both sides are multiples of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let m = multiple.max(1);
        let (h, w) = (self.height.div_ceil(m) * m, self.width.div_ceil(m) * m);
        if (h, w) == (self.height, self.width) {
            return self.clone();
        }
        Self::from_fn(h, w, self.spacing, |r, c| if r < self.height && c < self.width { self.get(r, c) } else { 0.0 })
    }

    /// Top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        ensure!(
            height <= self.height && width <= self.width,
            Shape,
            "cannot crop {}x{} to {height}x{width}",
            self.height,
            self.width
        );
        Ok(Self::from_fn(height, width, self.spacing, |r, c| self.get(r, c)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}
