//! Reverse-mode differentiable tensors.
//!
//! [`Tensor`] is a plain row-major `f64` buffer with an optional gradient slot.
//! Computation is recorded on a [`Graph`] tape; [`Graph::backward`] replays it
//! in reverse. Only the layers the segmentation and regression networks need
//! are provided.

mod checkpoint;
mod gradcheck;
mod graph;
pub mod kernels;
mod suite;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{
    analytic_gradients, central_difference, compare_gradients, grad_check, relative_error, GradCheckReport, ParamCheck,
};
pub use graph::{BatchNormStats, Graph, Mode, Var};
pub use suite::{gradient_suite, OpCheck, FD_STEP, LAYER_TOLERANCE, POINTWISE_TOLERANCE, SUITE_OPS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        ensure!(shape.iter().all(|&d| d > 0), Shape, "dimensions must be positive, got {shape:?}");
        let numel: usize = shape.iter().product();
        ensure!(numel == data.len(), Shape, "shape {shape:?} holds {numel} elements but buffer has {}", data.len());
        Ok(Self { shape: shape.to_vec(), data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel], grad: None, requires_grad: false }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    /// Uniform samples in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| if bound == 0.0 { 0.0 } else { rng.random_range(-bound..=bound) }).collect();
        Self { shape: shape.to_vec(), data, grad: None, requires_grad: false }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        ensure!(g.len() == self.data.len(), Shape, "gradient of length {} for tensor of {} elements", g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Same data viewed under another shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let mut t = Tensor::new(shape, self.data.clone())?;
        t.requires_grad = self.requires_grad;
        Ok(t)
    }

    /// Collapses every dimension after the first.
    pub fn flatten(&self) -> Result<Tensor> {
        let n = self.shape[0];
        self.reshape(&[n, self.numel() / n])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}
