use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::BinaryMask;
use crate::models::{ArchTag, ModelBundle};
use crate::phantom::Sample;
use crate::preprocess::{augment, normalize_intensity, GrayImage};
use crate::rng;
use crate::tensor::{Mode, Tensor};

use super::{adam_step, dice_loss, mse_loss, LossKind, OptimState, TrainPlan};

const STREAM_SHUFFLE: u64 = 11;
const STREAM_AUGMENT: u64 = 12;
const STREAM_DROPOUT: u64 = 13;

/// A case prepared for the network: normalized image, optional mask and
/// the regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub case_id: u64,
    pub image: GrayImage,
    pub mask: Option<BinaryMask>,
    /// Ground-truth length divided by the mean pixel spacing.
    pub target_px: f64,
}

/// Mean of the two pixel spacings, the mm-per-px factor of regressed lengths.
pub fn mean_spacing(image: &GrayImage) -> f64 {
    let s = image.spacing();
    0.5 * (s.sy + s.sx)
}

impl TrainExample {
    pub fn from_sample(s: &Sample) -> Self {
        Self {
            case_id: s.case_id,
            image: normalize_intensity(&s.image),
            mask: Some(s.mask.clone()),
            target_px: s.length_mm / mean_spacing(&s.image),
        }
    }
}

/// Stack equally sized images into `[N, 1, H, W]`.
pub fn batch_tensor(images: &[&GrayImage]) -> Result<Tensor> {
    ensure!(!images.is_empty(), InvalidArgument, "empty batch");
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        ensure!(img.height() == h && img.width() == w, Shape, "batch mixes {h}x{w} and {}x{} images", img.height(), img.width());
        data.extend_from_slice(img.data());
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub steps: usize,
}

fn check_compatible(model: &ModelBundle, loss: LossKind) -> Result<()> {
    let want = LossKind::for_arch(model.tag());
    ensure!(
        want == loss,
        InvalidArgument,
        "{:?} loss cannot train a {} model",
        loss,
        match model.tag() {
            ArchTag::SB => "segmentation",
            _ => "regression",
        }
    );
    Ok(())
}

fn as_divergence(err: Error, epoch: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged { epoch },
        e => e,
    }
}

pub fn train(model: &mut ModelBundle, data: &[TrainExample], plan: &TrainPlan, optim: &mut OptimState) -> Result<TrainReport> {
    train_with(model, data, plan, optim, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean loss)` after each epoch.
pub fn train_with(
    model: &mut ModelBundle,
    data: &[TrainExample],
    plan: &TrainPlan,
    optim: &mut OptimState,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    plan.validate()?;
    optim.validate()?;
    ensure!(!data.is_empty(), InvalidArgument, "training set is empty");
    check_compatible(model, plan.loss)?;
    if plan.loss == LossKind::Dice {
        ensure!(data.iter().all(|e| e.mask.is_some()), InvalidArgument, "segmentation training needs a mask for every case");
    }
    let mut curve = Vec::with_capacity(plan.epochs);
    let mut steps = 0;
    for epoch in 0..plan.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(plan.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for (bi, batch) in plan.batches(&order).into_iter().enumerate() {
            let prepared: Vec<(GrayImage, Option<BinaryMask>)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &data[i];
                    match &plan.augmentation {
                        Some(spec) => {
                            let key = rng::derive_key(plan.seed, &[STREAM_AUGMENT, epoch as u64, ex.case_id]);
                            augment(&ex.image, ex.mask.as_ref(), spec, key).map(|(img, m, _)| (img, m))
                        }
                        None => Ok((ex.image.clone(), ex.mask.clone())),
                    }
                })
                .collect::<Result<_>>()?;
            let images: Vec<&GrayImage> = prepared.iter().map(|(i, _)| i).collect();
            let input = batch_tensor(&images)?;
            let seed = rng::derive_key(plan.seed, &[STREAM_DROPOUT, epoch as u64, bi as u64]);
            let step = || -> Result<(f64, _, _)> {
                let mut pass = model.forward(&input, Mode::Train, seed)?;
                let out = pass.output;
                let loss = match plan.loss {
                    LossKind::Dice => {
                        let masks: Vec<&BinaryMask> = prepared.iter().map(|(_, m)| m.as_ref().expect("checked")).collect();
                        dice_loss(&mut pass.graph, out, &masks, plan.dice_smooth)?
                    }
                    LossKind::Mse => {
                        let targets: Vec<f64> = batch.iter().map(|&i| data[i].target_px).collect();
                        mse_loss(&mut pass.graph, out, &targets)?
                    }
                };
                let value = pass.graph.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFinite("training loss".into()));
                }
                pass.graph.backward(loss)?;
                Ok((value, pass.param_grads(), pass.norm_stats()))
            };
            let (value, grads, norms) = step().map_err(|e| as_divergence(e, epoch))?;
            model.set_norm_stats(norms)?;
            adam_step(model, &grads, optim).map_err(|e| as_divergence(e, epoch))?;
            total += value * batch.len() as f64;
            steps += 1;
        }
        let mean = total / data.len() as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(TrainReport { loss_curve: curve, steps })
}

/// Eval-mode probability maps, one `H·W` vector per image.
pub fn predict_probabilities(model: &ModelBundle, images: &[&GrayImage], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    ensure!(model.tag() == ArchTag::SB, InvalidArgument, "probability maps need a segmentation model");
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let y = model.predict(&batch_tensor(chunk)?)?;
        let per = y.numel() / chunk.len();
        out.extend(y.data().chunks(per).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Eval-mode regressed lengths in pixels.
pub fn predict_lengths_px(model: &ModelBundle, images: &[&GrayImage], batch_size: usize) -> Result<Vec<f64>> {
    ensure!(model.tag() != ArchTag::SB, InvalidArgument, "length regression needs a regressor");
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let y = model.predict(&batch_tensor(chunk)?)?;
        out.extend_from_slice(y.data());
    }
    Ok(out)
}
