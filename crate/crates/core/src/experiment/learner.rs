use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{measure_mask, BinaryMask};
use crate::models::{
    build_encoder_regressor, build_unet, build_vgg_regressor, transfer_encoder_weights, ArchTag, ModelBundle, RegressorConfig,
    UNetConfig, VggConfig,
};
use crate::phantom::Sample;
use crate::preprocess::{normalize_intensity, AugmentationSpec, GrayImage};
use crate::rng;
use crate::training::{
    mean_spacing, predict_lengths_px, predict_probabilities, train, LossKind, OptimState, TrainExample, TrainPlan,
    DEFAULT_BATCH_SIZE, DESK_LEARNING_RATE,
};

use super::Method;

const STREAM_INIT: u64 = 31;
const STREAM_TRAIN: u64 = 32;

/// Where in the nested protocol a model is being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Inner,
    Outer,
}

pub struct FitRequest<'a> {
    pub method: Method,
    pub stage: Stage,
    pub train: &'a [&'a Sample],
    pub weight_decay: f64,
    pub seed: u64,
    /// Trained segmentation model whose encoder initialises a DEW model.
    pub encoder_source: Option<&'a Fitted>,
}

/// A trained model as handed back to the runner.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Option<ModelBundle>,
    pub loss_curve: Vec<f64>,
    /// `Some(true)` once a DEW encoder was checked bit-identical to its source.
    pub transfer_verified: Option<bool>,
}

/// Prediction for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutput {
    pub case_id: u64,
    pub length_mm: f64,
    /// Predicted mask, segmentation methods only.
    pub mask: Option<BinaryMask>,
}

/// Trains and applies the models of each method.
pub trait Learner: Sync {
    fn fit(&self, req: &FitRequest<'_>) -> Result<Fitted>;
    fn predict(&self, method: Method, fitted: &Fitted, cases: &[&Sample]) -> Result<Vec<CaseOutput>>;
}

/// Network and optimiser settings shared by all four methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    /// Segmentation network; also the encoder of DE and DEW.
    pub unet: UNetConfig,
    pub fc_nodes: usize,
    /// VGG-19 stage widths are divided by this.
    pub vgg_divisor: usize,
    pub epochs: usize,
    /// Epochs for inner-fold models; `None` uses `epochs`.
    pub inner_epochs: Option<usize>,
    pub batch_size: usize,
    pub sb_learning_rate: f64,
    pub regressor_learning_rate: f64,
    pub augmentation: Option<AugmentationSpec>,
    pub threshold: f64,
    /// Exclude transferred encoder weights from DEW fine-tuning.
    pub freeze_transferred: bool,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            unet: UNetConfig::desk(),
            fc_nodes: 256,
            vgg_divisor: 1,
            epochs: 150,
            inner_epochs: None,
            batch_size: DEFAULT_BATCH_SIZE,
            sb_learning_rate: DESK_LEARNING_RATE,
            regressor_learning_rate: DESK_LEARNING_RATE,
            augmentation: Some(AugmentationSpec::default()),
            threshold: 0.5,
            freeze_transferred: false,
        }
    }
}

impl NetworkSettings {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        ensure!(self.vgg_divisor >= 1, InvalidArgument, "vgg_divisor must be at least 1");
        ensure!(self.fc_nodes >= 1, InvalidArgument, "fc_nodes must be at least 1");
        ensure!(self.batch_size >= 1, InvalidArgument, "batch size must be at least 1");
        for lr in [self.sb_learning_rate, self.regressor_learning_rate] {
            ensure!(lr.is_finite() && lr >= 0.0, InvalidArgument, "learning rate {lr} must be finite and non-negative");
        }
        ensure!((0.0..=1.0).contains(&self.threshold), InvalidArgument, "threshold {} outside [0, 1]", self.threshold);
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }

    fn epochs_for(&self, stage: Stage) -> usize {
        match stage {
            Stage::Inner => self.inner_epochs.unwrap_or(self.epochs),
            Stage::Outer => self.epochs,
        }
    }

    pub fn regressor_config(&self, input_hw: [usize; 2]) -> RegressorConfig {
        RegressorConfig { fc_nodes: self.fc_nodes, ..RegressorConfig::new(self.unet.clone(), input_hw) }
    }

    pub fn vgg_config(&self, input_hw: [usize; 2]) -> VggConfig {
        VggConfig { fc_nodes: self.fc_nodes, ..VggConfig::vgg19_narrow(input_hw, self.vgg_divisor) }
    }

    /// Fresh, untrained model for `method`. DEW starts as a DE model.
    pub fn build(&self, method: Method, input_hw: [usize; 2], seed: u64) -> Result<ModelBundle> {
        match method {
            Method::SB => build_unet(self.unet.clone(), seed),
            Method::DE | Method::DEW => build_encoder_regressor(self.regressor_config(input_hw), seed),
            Method::VGG => build_vgg_regressor(self.vgg_config(input_hw), seed),
        }
    }
}

/// Copy the encoder of `source` into `dst` and confirm every copied tensor
/// matches bit for bit.
pub fn transfer_and_verify(source: &ModelBundle, dst: &mut ModelBundle, freeze: bool) -> Result<()> {
    transfer_encoder_weights(source, dst, freeze)?;
    for name in source.encoder_param_names() {
        let a = source.param(&name)?.data();
        let b = dst.param(&name)?.data();
        let same = a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same, Graph, "transferred tensor {name} differs from its source");
    }
    Ok(())
}

/// Set the output bias of a regressor to `value`.
pub fn init_output_bias(model: &mut ModelBundle, value: f64) -> Result<()> {
    let bias = model.param_mut("fc_out.bias")?;
    bias.data_mut().iter_mut().for_each(|b| *b = value);
    Ok(())
}

fn input_hw(cases: &[&Sample]) -> Result<[usize; 2]> {
    let first = cases.first().ok_or_else(|| Error::InvalidArgument("no cases".into()))?;
    Ok([first.image.height(), first.image.width()])
}

/// Trains the real networks.
#[derive(Debug, Clone, Default)]
pub struct NetworkLearner {
    pub settings: NetworkSettings,
}

impl NetworkLearner {
    pub fn new(settings: NetworkSettings) -> Self {
        Self { settings }
    }
}

/// Segment already normalized images and measure the largest component.
/// An empty segmentation measures 0 mm.
pub fn segment_and_measure(
    model: &ModelBundle,
    images: &[&GrayImage],
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<(f64, BinaryMask)>> {
    let probs = predict_probabilities(model, images, batch_size)?;
    images
        .iter()
        .zip(probs)
        .map(|(img, p)| {
            let mask = BinaryMask::from_probabilities(img.height(), img.width(), &p, threshold, img.spacing())?;
            let length = match measure_mask(&mask) {
                Ok(m) => m.length_mm,
                Err(Error::NoSpleenFound) => 0.0,
                Err(e) => return Err(e),
            };
            Ok((length, mask))
        })
        .collect()
}

impl NetworkLearner {
    /// The model `fit` starts training from: fresh weights, the verified
    /// encoder transfer for DEW, and regressor output bias at the mean target.
    pub fn initial_model(&self, req: &FitRequest<'_>) -> Result<ModelBundle> {
        let s = &self.settings;
        let mut model = s.build(req.method, input_hw(req.train)?, rng::derive_key(req.seed, &[STREAM_INIT]))?;
        if req.method == Method::DEW {
            let source = req
                .encoder_source
                .and_then(|f| f.model.as_ref())
                .ok_or_else(|| Error::InvalidArgument("DEW needs a trained segmentation model".into()))?;
            transfer_and_verify(source, &mut model, s.freeze_transferred)?;
        }
        if model.tag() != ArchTag::SB {
            let targets: Vec<f64> = req.train.iter().map(|c| c.length_mm / mean_spacing(&c.image)).collect();
            init_output_bias(&mut model, targets.iter().sum::<f64>() / targets.len() as f64)?;
        }
        Ok(model)
    }
}

impl Learner for NetworkLearner {
    fn fit(&self, req: &FitRequest<'_>) -> Result<Fitted> {
        let s = &self.settings;
        let mut model = self.initial_model(req)?;
        let data: Vec<TrainExample> = req.train.iter().map(|c| TrainExample::from_sample(c)).collect();
        let loss = LossKind::for_arch(model.tag());
        let plan = TrainPlan {
            epochs: s.epochs_for(req.stage),
            batch_size: s.batch_size,
            augmentation: s.augmentation,
            ..TrainPlan::new(loss, rng::derive_key(req.seed, &[STREAM_TRAIN]))
        };
        let lr = if loss == LossKind::Dice { s.sb_learning_rate } else { s.regressor_learning_rate };
        let mut optim = OptimState::adam(lr, req.weight_decay);
        let report = train(&mut model, &data, &plan, &mut optim)?;
        let transfer_verified = (req.method == Method::DEW).then_some(true);
        Ok(Fitted { model: Some(model), loss_curve: report.loss_curve, transfer_verified })
    }

    fn predict(&self, method: Method, fitted: &Fitted, cases: &[&Sample]) -> Result<Vec<CaseOutput>> {
        let model = fitted.model.as_ref().ok_or_else(|| Error::InvalidArgument("fitted result holds no model".into()))?;
        let images: Vec<GrayImage> = cases.iter().map(|c| normalize_intensity(&c.image)).collect();
        let refs: Vec<&GrayImage> = images.iter().collect();
        let bs = self.settings.batch_size;
        if method == Method::SB {
            let measured = segment_and_measure(model, &refs, self.settings.threshold, bs)?;
            Ok(cases
                .iter()
                .zip(measured)
                .map(|(c, (length_mm, mask))| CaseOutput { case_id: c.case_id, length_mm, mask: Some(mask) })
                .collect())
        } else {
            let px = predict_lengths_px(model, &refs, bs)?;
            Ok(cases
                .iter()
                .zip(px)
                .map(|(c, p)| CaseOutput { case_id: c.case_id, length_mm: p * mean_spacing(&c.image), mask: None })
                .collect())
        }
    }
}

/// One recorded call to [`Learner::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub method: Method,
    pub stage: Stage,
    pub train_ids: Vec<u64>,
    pub weight_decay: f64,
    pub had_encoder_source: bool,
}

/// Predicts ground truth without training; logs every fit call.
#[derive(Debug, Default)]
pub struct PerfectLearner {
    log: Mutex<Vec<FitRecord>>,
}

impl PerfectLearner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit_log(&self) -> Vec<FitRecord> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Learner for PerfectLearner {
    fn fit(&self, req: &FitRequest<'_>) -> Result<Fitted> {
        self.log.lock().expect("log lock").push(FitRecord {
            method: req.method,
            stage: req.stage,
            train_ids: req.train.iter().map(|c| c.case_id).collect(),
            weight_decay: req.weight_decay,
            had_encoder_source: req.encoder_source.is_some(),
        });
        Ok(Fitted {
            model: None,
            loss_curve: Vec::new(),
            transfer_verified: (req.method == Method::DEW).then_some(req.encoder_source.is_some()),
        })
    }

    fn predict(&self, method: Method, _fitted: &Fitted, cases: &[&Sample]) -> Result<Vec<CaseOutput>> {
        Ok(cases
            .iter()
            .map(|c| CaseOutput {
                case_id: c.case_id,
                length_mm: c.length_mm,
                mask: (method == Method::SB).then(|| c.mask.clone()),
            })
            .collect())
    }
}
