//! The three networks: segmentation U-Net (SB), U-Net-encoder regressor
//! (DE/DEW) and VGG-19-style regressor (VGG).

mod config;
mod forward;
mod layout;

pub use config::{ArchTag, Architecture, RegressorConfig, UNetConfig, VggConfig, VGG19_CONVS_PER_STAGE, VGG19_STAGE_WIDTHS};
pub use forward::ForwardPass;
pub use layout::{param_count, param_layout, ParamKind, ParamSpec};

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::tensor::{self, BatchNormStats, Checkpoint, Tensor};
use layout::LayoutBuilder;

/// Batch-norm momentum for running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Parameter counts the original authors reported for their networks.
pub const REPORTED_VGG_PARAMS: usize = 178_180_545;
pub const REPORTED_DE_PARAMS: usize = 344_512_449;

/// Named parameters and batch-norm state of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    arch: Architecture,
    params: IndexMap<String, Tensor>,
    norms: IndexMap<String, BatchNormStats>,
    frozen: Vec<String>,
}

impl ModelBundle {
    /// Allocates and initializes every parameter of `arch` from `seed`.
    pub fn build(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = LayoutBuilder::for_arch(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::with_capacity(layout.params.len());
        for spec in layout.params {
            let t = match spec.kind {
                ParamKind::Weight { fan_in } => Tensor::uniform(&spec.shape, 1.0 / (fan_in as f64).sqrt(), &mut rng),
                ParamKind::Bias | ParamKind::Beta => Tensor::zeros(&spec.shape),
                ParamKind::Gamma => Tensor::ones(&spec.shape),
            };
            ensure!(
                params.insert(spec.name.clone(), t.with_requires_grad(true)).is_none(),
                InvalidArgument,
                "duplicate parameter name {}",
                spec.name
            );
        }
        let norms = layout.norms.into_iter().map(|(name, c)| (name, BatchNormStats::new(c))).collect();
        Ok(Self { arch, params, norms, frozen: Vec::new() })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tag(&self) -> ArchTag {
        self.arch.tag()
    }

    pub fn params(&self) -> &IndexMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, Tensor> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn norm_stats(&self) -> &IndexMap<String, BatchNormStats> {
        &self.norms
    }

    pub fn set_norm_stats(&mut self, stats: IndexMap<String, BatchNormStats>) -> Result<()> {
        for (name, s) in &stats {
            let cur = self.norms.get(name).ok_or_else(|| Error::UnknownParameter(format!("{name} (batch-norm state)")))?;
            ensure!(cur.mean.len() == s.mean.len(), Shape, "batch-norm {name} channel mismatch");
        }
        self.norms.extend(stats);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Parameter names excluded from optimizer updates.
    pub fn frozen(&self) -> &[String] {
        &self.frozen
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|n| n == name)
    }

    pub fn freeze(&mut self, names: impl IntoIterator<Item = String>) {
        for name in names {
            if !self.is_frozen(&name) {
                self.frozen.push(name);
            }
        }
    }

    /// Names of encoder and bottleneck parameters (empty for VGG).
    pub fn encoder_param_names(&self) -> Vec<String> {
        self.params.keys().filter(|n| is_encoder_name(n)).cloned().collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = self.params.clone();
        for (name, s) in &self.norms {
            let c = s.mean.len();
            tensors.insert(format!("{name}.running_mean"), Tensor::new(&[c], s.mean.clone()).expect("channel count"));
            tensors.insert(format!("{name}.running_var"), Tensor::new(&[c], s.var.clone()).expect("channel count"));
        }
        let meta = serde_json::json!({
            "architecture": self.arch,
            "tag": self.tag(),
            "frozen": self.frozen,
        });
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(
            ckpt.meta.get("architecture").cloned().ok_or_else(|| Error::Checkpoint("missing architecture".into()))?,
        )?;
        let mut model = Self::build(arch, 0)?;
        let expected = model.params.len() + 2 * model.norms.len();
        ensure!(
            ckpt.tensors.len() == expected,
            Checkpoint,
            "checkpoint holds {} tensors, architecture needs {expected}",
            ckpt.tensors.len()
        );
        for (name, t) in model.params.iter_mut() {
            let src = ckpt.tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            ensure!(src.shape() == t.shape(), Checkpoint, "tensor {name} has shape {:?}", src.shape());
            *t = src.clone().with_requires_grad(true);
        }
        for (name, s) in model.norms.iter_mut() {
            let get = |suffix: &str| {
                ckpt.tensors
                    .get(&format!("{name}.{suffix}"))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Checkpoint(format!("missing {name}.{suffix}")))
            };
            let (mean, var) = (get("running_mean")?, get("running_var")?);
            ensure!(mean.len() == s.mean.len() && var.len() == s.var.len(), Checkpoint, "batch-norm {name} size");
            s.mean = mean;
            s.var = var;
        }
        if let Some(frozen) = ckpt.meta.get("frozen") {
            model.frozen = serde_json::from_value(frozen.clone())?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        tensor::save_checkpoint(&self.to_checkpoint(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&tensor::load_checkpoint(path)?)
    }
}

fn is_encoder_name(name: &str) -> bool {
    name.starts_with("bottleneck.")
        || name.strip_prefix("enc").is_some_and(|rest| rest.chars().next().is_some_and(|c| c.is_ascii_digit()))
}

pub fn build_unet(cfg: UNetConfig, seed: u64) -> Result<ModelBundle> {
    ModelBundle::build(Architecture::UNet(cfg), seed)
}

pub fn build_encoder_regressor(cfg: RegressorConfig, seed: u64) -> Result<ModelBundle> {
    ModelBundle::build(Architecture::EncoderRegressor(cfg), seed)
}

pub fn build_vgg_regressor(cfg: VggConfig, seed: u64) -> Result<ModelBundle> {
    ModelBundle::build(Architecture::Vgg(cfg), seed)
}

/// Copies every encoder and bottleneck parameter (and its batch-norm running
/// statistics) from a segmentation U-Net into an encoder-regressor.
///
/// The dense head of `dst` is left untouched. With `freeze` set, the copied
/// parameters are excluded from later optimizer updates.
pub fn transfer_encoder_weights(src: &ModelBundle, dst: &mut ModelBundle, freeze: bool) -> Result<()> {
    let (Architecture::UNet(src_cfg), Architecture::EncoderRegressor(dst_cfg)) = (&src.arch, &dst.arch) else {
        return Err(Error::InvalidArgument("weight transfer goes from a segmentation U-Net to an encoder regressor".into()));
    };
    ensure!(src_cfg == &dst_cfg.encoder, InvalidArgument, "encoder configurations differ: {src_cfg:?} vs {:?}", dst_cfg.encoder);
    let names = src.encoder_param_names();
    for name in &names {
        let value = src.param(name)?.clone();
        let slot = dst.param_mut(name)?;
        ensure!(slot.shape() == value.shape(), Shape, "{name} shape differs between models");
        *slot = value.with_requires_grad(true);
    }
    for (name, stats) in &src.norms {
        if is_encoder_name(name) {
            dst.norms.insert(name.clone(), stats.clone());
        }
    }
    if freeze {
        dst.freeze(names);
    }
    Ok(())
}

/// Writes a `name,shape,params` CSV row per parameter tensor.
pub fn describe<W: Write>(arch: &Architecture, out: W) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "shape", "params"])?;
    let mut total = 0;
    for spec in param_layout(arch) {
        let shape: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
        total += spec.numel();
        w.write_record([spec.name.clone(), shape.join("x"), spec.numel().to_string()])?;
    }
    w.write_record(["total".to_string(), String::new(), total.to_string()])?;
    w.flush().map_err(|e| Error::io("describe output", e))?;
    Ok(total)
}
