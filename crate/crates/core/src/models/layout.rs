//! Parameter layouts, computed from a configuration without allocating weights.

use serde::Serialize;

use super::config::{Architecture, RegressorConfig, UNetConfig, VggConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Convolution or dense weight; initialized uniformly in ±1/sqrt(fan_in).
    Weight { fan_in: usize },
    /// Zero-initialized bias.
    Bias,
    /// Batch-norm scale, initialized to one.
    Gamma,
    /// Batch-norm shift, initialized to zero.
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Default)]
pub(crate) struct LayoutBuilder {
    pub params: Vec<ParamSpec>,
    /// Batch-norm layer names with their channel counts.
    pub norms: Vec<(String, usize)>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) {
        self.params.push(ParamSpec { name, shape, kind });
    }

    fn conv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize) {
        self.push(format!("{name}.weight"), vec![out_c, in_c, k, k], ParamKind::Weight { fan_in: in_c * k * k });
        self.push(format!("{name}.bias"), vec![out_c], ParamKind::Bias);
    }

    fn up(&mut self, name: &str, in_c: usize, out_c: usize) {
        self.push(format!("{name}.weight"), vec![in_c, out_c, 2, 2], ParamKind::Weight { fan_in: in_c });
        self.push(format!("{name}.bias"), vec![out_c], ParamKind::Bias);
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), vec![c], ParamKind::Gamma);
        self.push(format!("{name}.beta"), vec![c], ParamKind::Beta);
        self.norms.push((name.to_string(), c));
    }

    fn dense(&mut self, name: &str, in_f: usize, out_f: usize) {
        self.push(format!("{name}.weight"), vec![out_f, in_f], ParamKind::Weight { fan_in: in_f });
        self.push(format!("{name}.bias"), vec![out_f], ParamKind::Bias);
    }

    /// Two 3×3 conv + batch-norm (+ ReLU) layers.
    fn double_conv(&mut self, name: &str, in_c: usize, out_c: usize) {
        self.conv(&format!("{name}.conv1"), in_c, out_c, 3);
        self.norm(&format!("{name}.bn1"), out_c);
        self.conv(&format!("{name}.conv2"), out_c, out_c, 3);
        self.norm(&format!("{name}.bn2"), out_c);
    }

    fn encoder(&mut self, cfg: &UNetConfig) {
        let mut in_c = cfg.in_channels;
        for level in 0..cfg.depth {
            self.double_conv(&format!("enc{level}"), in_c, cfg.channels(level));
            in_c = cfg.channels(level);
        }
        self.double_conv("bottleneck", in_c, cfg.bottleneck_channels());
    }

    fn head(&mut self, in_f: usize, nodes: usize, layers: usize, out: usize) {
        let mut width = in_f;
        for i in 1..=layers {
            self.dense(&format!("fc{i}"), width, nodes);
            self.norm(&format!("fc{i}.bn"), nodes);
            width = nodes;
        }
        self.dense("fc_out", width, out);
    }

    pub fn unet(cfg: &UNetConfig) -> Self {
        let mut b = Self::default();
        b.encoder(cfg);
        for level in (0..cfg.depth).rev() {
            let c = cfg.channels(level);
            b.up(&format!("dec{level}.up"), cfg.channels(level + 1), c);
            b.double_conv(&format!("dec{level}"), 2 * c, c);
        }
        b.conv("head", cfg.channels(0), 1, 1);
        b
    }

    pub fn regressor(cfg: &RegressorConfig) -> Self {
        let mut b = Self::default();
        b.encoder(&cfg.encoder);
        b.head(cfg.flat_features(), cfg.fc_nodes, cfg.fc_layers, cfg.output_dim);
        b
    }

    pub fn vgg(cfg: &VggConfig) -> Self {
        let mut b = Self::default();
        let mut in_c = cfg.in_channels;
        for (stage, (&width, &convs)) in cfg.stage_widths.iter().zip(&cfg.convs_per_stage).enumerate() {
            for i in 1..=convs {
                b.conv(&format!("stage{}.conv{i}", stage + 1), in_c, width, 3);
                b.norm(&format!("stage{}.bn{i}", stage + 1), width);
                in_c = width;
            }
        }
        b.head(cfg.flat_features(), cfg.fc_nodes, cfg.fc_layers, cfg.output_dim);
        b
    }

    pub fn for_arch(arch: &Architecture) -> Self {
        match arch {
            Architecture::UNet(c) => Self::unet(c),
            Architecture::EncoderRegressor(c) => Self::regressor(c),
            Architecture::Vgg(c) => Self::vgg(c),
        }
    }
}

/// Every trainable parameter of `arch`, in registration order.
pub fn param_layout(arch: &Architecture) -> Vec<ParamSpec> {
    LayoutBuilder::for_arch(arch).params
}

/// Total trainable parameter count of `arch`.
pub fn param_count(arch: &Architecture) -> usize {
    param_layout(arch).iter().map(ParamSpec::numel).sum()
}
