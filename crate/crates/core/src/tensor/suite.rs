//! Finite-difference verification of every differentiable op.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{grad_check, BatchNormStats, Graph, Mode, Tensor, Var};
use crate::error::Result;

/// Central-difference step used throughout the suite.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance for layers with reductions (conv, norm, linear, pooling, losses).
pub const LAYER_TOLERANCE: f64 = 1e-4;
/// Tolerance for pointwise and structural ops.
pub const POINTWISE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type LossFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Case {
    inputs: Vec<(&'static str, Tensor)>,
    loss: LossFn,
}

fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Uniform values kept at least `gap` away from zero (for ops with a kink at 0).
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(gap..1.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// Distinct values with pairwise gaps of at least 0.01 (no pooling ties under perturbation).
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5 * n as f64 * 0.01).collect();
    data.shuffle(rng);
    Tensor::new(shape, data).expect("consistent shape")
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn make_case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = dims(rng, 1, 2);
    let c = dims(rng, 1, 3);
    match op {
        "conv2d" => {
            let k = dims(rng, 1, 3);
            let kernel = [1, 2, 3][rng.random_range(0..3)];
            let stride = dims(rng, 1, 2);
            let pad = if kernel == 3 { rng.random_range(0..=1) } else { 0 };
            // choose spatial dims giving an exact output size
            let out_h = dims(rng, 2, 4);
            let out_w = dims(rng, 2, 4);
            let h = (out_h - 1) * stride + kernel - 2 * pad;
            let w = (out_w - 1) * stride + kernel - 2 * pad;
            let x = Tensor::uniform(&[n, c, h, w], 1.0, rng);
            let wt = Tensor::uniform(&[k, c, kernel, kernel], 1.0, rng);
            let b = Tensor::uniform(&[k], 1.0, rng);
            let r = Tensor::uniform(&[n, k, out_h, out_w], 1.0, rng);
            Case {
                inputs: vec![("input", x), ("weight", wt), ("bias", b)],
                loss: Box::new(move |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "conv_transpose2x2" => {
            let k = dims(rng, 1, 3);
            let (h, w) = (dims(rng, 1, 3), dims(rng, 1, 3));
            let x = Tensor::uniform(&[n, c, h, w], 1.0, rng);
            let wt = Tensor::uniform(&[c, k, 2, 2], 1.0, rng);
            let b = Tensor::uniform(&[k], 1.0, rng);
            let r = Tensor::uniform(&[n, k, 2 * h, 2 * w], 1.0, rng);
            Case {
                inputs: vec![("input", x), ("weight", wt), ("bias", b)],
                loss: Box::new(move |g, v| {
                    let y = g.conv_transpose2x2(v[0], v[1], Some(v[2]))?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "max_pool2" => {
            let (h, w) = (2 * dims(rng, 1, 3), 2 * dims(rng, 1, 3));
            let x = distinct(&[n, c, h, w], rng);
            let r = Tensor::uniform(&[n, c, h / 2, w / 2], 1.0, rng);
            Case {
                inputs: vec![("input", x)],
                loss: Box::new(move |g, v| {
                    let y = g.max_pool2(v[0])?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let train = op == "batch_norm_train";
            let (h, w) = (dims(rng, 1, 3), dims(rng, 2, 3));
            let x = Tensor::uniform(&[n + 1, c, h, w], 2.0, rng);
            let gamma = Tensor::uniform(&[c], 1.0, rng);
            let beta = Tensor::uniform(&[c], 1.0, rng);
            let r = Tensor::uniform(&[n + 1, c, h, w], 1.0, rng);
            let stats = BatchNormStats {
                mean: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
            };
            let mode = if train { Mode::Train } else { Mode::Eval };
            Case {
                inputs: vec![("input", x), ("gamma", gamma), ("beta", beta)],
                loss: Box::new(move |g, v| {
                    let mut s = stats.clone();
                    let y = g.batch_norm(v[0], v[1], v[2], &mut s, mode, 0.1, 1e-5)?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "relu" | "sigmoid" => {
            let shape = [n, c, dims(rng, 1, 4)];
            let x = if op == "relu" { away_from_zero(&shape, 1e-3, rng) } else { Tensor::uniform(&shape, 4.0, rng) };
            let r = Tensor::uniform(&shape, 1.0, rng);
            let relu = op == "relu";
            Case {
                inputs: vec![("input", x)],
                loss: Box::new(move |g, v| {
                    let y = if relu { g.relu(v[0])? } else { g.sigmoid(v[0])? };
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "dropout" => {
            let shape = [n, c, dims(rng, 2, 6)];
            let x = Tensor::uniform(&shape, 1.0, rng);
            let r = Tensor::uniform(&shape, 1.0, rng);
            let seed: u64 = rng.random();
            Case {
                inputs: vec![("input", x)],
                loss: Box::new(move |g, v| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
                    let y = g.dropout(v[0], 0.5, Mode::Train, &mut mask_rng)?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "linear" => {
            let d = dims(rng, 1, 5);
            let m = dims(rng, 1, 4);
            let x = Tensor::uniform(&[n + 1, d], 1.0, rng);
            let w = Tensor::uniform(&[m, d], 1.0, rng);
            let b = Tensor::uniform(&[m], 1.0, rng);
            let r = Tensor::uniform(&[n + 1, m], 1.0, rng);
            Case {
                inputs: vec![("input", x), ("weight", w), ("bias", b)],
                loss: Box::new(move |g, v| {
                    let y = g.linear(v[0], v[1], Some(v[2]))?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "flatten" => {
            let shape = [n, c, dims(rng, 1, 3), dims(rng, 1, 3)];
            let x = Tensor::uniform(&shape, 1.0, rng);
            let d = shape[1] * shape[2] * shape[3];
            let r = Tensor::uniform(&[n, d], 1.0, rng);
            Case {
                inputs: vec![("input", x)],
                loss: Box::new(move |g, v| {
                    let y = g.flatten(v[0])?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "concat_channels" => {
            let (h, w) = (dims(rng, 1, 3), dims(rng, 1, 3));
            let c2 = dims(rng, 1, 3);
            let a = Tensor::uniform(&[n, c, h, w], 1.0, rng);
            let b = Tensor::uniform(&[n, c2, h, w], 1.0, rng);
            let r = Tensor::uniform(&[n, c + c2, h, w], 1.0, rng);
            Case {
                inputs: vec![("a", a), ("b", b)],
                loss: Box::new(move |g, v| {
                    let y = g.concat_channels(v[0], v[1])?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        "add_mul_scale" => {
            let shape = [n, c, dims(rng, 1, 4)];
            let a = Tensor::uniform(&shape, 1.0, rng);
            let b = Tensor::uniform(&shape, 1.0, rng);
            let k = rng.random_range(-2.0..2.0);
            Case {
                inputs: vec![("a", a), ("b", b)],
                loss: Box::new(move |g, v| {
                    let s = g.add(v[0], v[1])?;
                    let p = g.mul(s, v[0])?;
                    let q = g.scale(p, k)?;
                    g.sum(q)
                }),
            }
        }
        "dice_loss" => {
            let len = n * c * dims(rng, 2, 6);
            let p = Tensor::new(&[len], (0..len).map(|_| rng.random_range(0.05..0.95)).collect()).expect("consistent shape");
            let target: Vec<f64> = (0..len).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
            Case { inputs: vec![("pred", p)], loss: Box::new(move |g, v| g.dice_loss(v[0], &target, 1.0)) }
        }
        "mse_loss" => {
            let len = n * c;
            let p = Tensor::uniform(&[len, 1], 5.0, rng);
            let target: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..5.0)).collect();
            Case { inputs: vec![("pred", p)], loss: Box::new(move |g, v| g.mse_loss(v[0], &target)) }
        }
        "composite" => {
            // conv -> batch norm -> relu -> pool -> flatten -> linear
            let x = Tensor::uniform(&[2, 1, 4, 4], 1.0, rng);
            let w = Tensor::uniform(&[2, 1, 3, 3], 1.0, rng);
            let b = Tensor::uniform(&[2], 0.5, rng);
            let gamma = Tensor::uniform(&[2], 1.0, rng);
            let beta = Tensor::uniform(&[2], 1.0, rng);
            let fw = Tensor::uniform(&[3, 8], 1.0, rng);
            let fb = Tensor::uniform(&[3], 1.0, rng);
            let r = Tensor::uniform(&[2, 3], 1.0, rng);
            Case {
                inputs: vec![
                    ("input", x),
                    ("conv.weight", w),
                    ("conv.bias", b),
                    ("bn.gamma", gamma),
                    ("bn.beta", beta),
                    ("fc.weight", fw),
                    ("fc.bias", fb),
                ],
                loss: Box::new(move |g, v| {
                    let mut stats = BatchNormStats::new(2);
                    let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                    let y = g.batch_norm(y, v[3], v[4], &mut stats, Mode::Train, 0.1, 1e-5)?;
                    let y = g.relu(y)?;
                    let y = g.max_pool2(y)?;
                    let y = g.flatten(y)?;
                    let y = g.linear(y, v[5], Some(v[6]))?;
                    weighted_sum(g, y, &r)
                }),
            }
        }
        other => unreachable!("unknown op {other}"),
    }
}

/// Ops covered by [`gradient_suite`] with their tolerance.
pub const SUITE_OPS: &[(&str, f64)] = &[
    ("conv2d", LAYER_TOLERANCE),
    ("conv_transpose2x2", LAYER_TOLERANCE),
    ("max_pool2", LAYER_TOLERANCE),
    ("batch_norm_train", LAYER_TOLERANCE),
    ("batch_norm_eval", LAYER_TOLERANCE),
    ("linear", LAYER_TOLERANCE),
    ("dice_loss", LAYER_TOLERANCE),
    ("mse_loss", LAYER_TOLERANCE),
    ("composite", LAYER_TOLERANCE),
    ("relu", POINTWISE_TOLERANCE),
    ("sigmoid", POINTWISE_TOLERANCE),
    ("dropout", POINTWISE_TOLERANCE),
    ("flatten", POINTWISE_TOLERANCE),
    ("concat_channels", POINTWISE_TOLERANCE),
    ("add_mul_scale", POINTWISE_TOLERANCE),
];

/// Runs `instances` random finite-difference checks for every op in [`SUITE_OPS`].
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut rows = Vec::with_capacity(SUITE_OPS.len());
    for (i, &(op, tolerance)) in SUITE_OPS.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for inst in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64) << 32) ^ inst as u64);
            let case = make_case(op, &mut rng);
            let report = grad_check(&case.inputs, &case.loss, FD_STEP, tolerance)?;
            worst = worst.max(report.max_rel_err());
        }
        rows.push(OpCheck { op: op.to_string(), instances, max_rel_err: worst, tolerance, passed: worst < tolerance });
    }
    Ok(rows)
}
