use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// U-Net segmentation network. Also describes the encoder shared with the
/// encoder-regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Channels at the first level; level `l` uses `base_channels * 2^l`.
    pub base_channels: usize,
    /// Number of downsampling blocks (the original U-Net has 4).
    pub depth: usize,
    /// Dropout probability applied at the bottleneck.
    pub dropout_p: f64,
}

impl UNetConfig {
    /// Original widths with the extra fifth downsampling block.
    pub fn paper() -> Self {
        Self { in_channels: 1, base_channels: 64, depth: 5, dropout_p: 0.5 }
    }

    /// Narrow variant for CPU-scale experiments.
    pub fn desk() -> Self {
        Self { base_channels: 8, ..Self::paper() }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.depth >= 1, InvalidArgument, "U-Net depth must be at least 1");
        ensure!(self.in_channels >= 1, InvalidArgument, "in_channels must be at least 1");
        ensure!(self.base_channels >= 1, InvalidArgument, "base_channels must be at least 1");
        ensure!((0.0..1.0).contains(&self.dropout_p), InvalidArgument, "dropout probability {} outside [0, 1)", self.dropout_p);
        Ok(())
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let f = 1usize << self.depth;
        ensure!(
            height.is_multiple_of(f) && width.is_multiple_of(f),
            Shape,
            "input {height}x{width} is not divisible by 2^{} = {f}",
            self.depth
        );
        Ok(())
    }
}

/// U-Net encoder + bottleneck followed by a fully connected regression head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    pub encoder: UNetConfig,
    pub fc_nodes: usize,
    pub fc_layers: usize,
    pub output_dim: usize,
    /// Input `(height, width)`; fixes the width of the first dense layer.
    pub input_hw: [usize; 2],
}

impl RegressorConfig {
    pub fn new(encoder: UNetConfig, input_hw: [usize; 2]) -> Self {
        Self { encoder, fc_nodes: 256, fc_layers: 2, output_dim: 1, input_hw }
    }

    /// Width of the flattened bottleneck feeding the first dense layer.
    pub fn flat_features(&self) -> usize {
        let f = 1usize << self.encoder.depth;
        self.encoder.bottleneck_channels() * (self.input_hw[0] / f) * (self.input_hw[1] / f)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.encoder.check_input(self.input_hw[0], self.input_hw[1])?;
        validate_head(self.fc_nodes, self.fc_layers, self.output_dim)
    }
}

fn validate_head(fc_nodes: usize, fc_layers: usize, output_dim: usize) -> Result<()> {
    ensure!(fc_layers >= 1, InvalidArgument, "need at least one hidden dense layer");
    ensure!(fc_nodes >= 1 && output_dim >= 1, InvalidArgument, "dense widths must be positive");
    Ok(())
}

/// Convolutions per stage in VGG-19.
pub const VGG19_CONVS_PER_STAGE: [usize; 5] = [2, 2, 4, 4, 4];
/// Output channel width per stage in VGG-19.
pub const VGG19_STAGE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VggConfig {
    pub in_channels: usize,
    pub stage_widths: [usize; 5],
    pub convs_per_stage: [usize; 5],
    pub fc_nodes: usize,
    pub fc_layers: usize,
    pub output_dim: usize,
    pub input_hw: [usize; 2],
}

impl VggConfig {
    /// Standard VGG-19 convolution plan on single-channel input.
    pub fn vgg19(input_hw: [usize; 2]) -> Self {
        Self {
            in_channels: 1,
            stage_widths: VGG19_STAGE_WIDTHS,
            convs_per_stage: VGG19_CONVS_PER_STAGE,
            fc_nodes: 256,
            fc_layers: 2,
            output_dim: 1,
            input_hw,
        }
    }

    /// VGG-19 layer plan with every stage width divided by `divisor`.
    pub fn vgg19_narrow(input_hw: [usize; 2], divisor: usize) -> Self {
        let mut cfg = Self::vgg19(input_hw);
        for w in &mut cfg.stage_widths {
            *w = (*w / divisor).max(1);
        }
        cfg
    }

    pub fn conv_count(&self) -> usize {
        self.convs_per_stage.iter().sum()
    }

    pub fn flat_features(&self) -> usize {
        self.stage_widths[4] * (self.input_hw[0] / 32) * (self.input_hw[1] / 32)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.input_hw[0].is_multiple_of(32) && self.input_hw[1].is_multiple_of(32),
            Shape,
            "VGG input {}x{} is not divisible by 2^5",
            self.input_hw[0],
            self.input_hw[1]
        );
        ensure!(
            self.stage_widths.iter().chain(&self.convs_per_stage).all(|&v| v >= 1),
            InvalidArgument,
            "every VGG stage needs a positive width and conv count"
        );
        validate_head(self.fc_nodes, self.fc_layers, self.output_dim)
    }
}

/// Which network a [`super::ModelBundle`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchTag {
    /// Segmentation U-Net.
    SB,
    /// U-Net encoder regressor.
    DE,
    /// VGG-style regressor.
    VGG,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    UNet(UNetConfig),
    EncoderRegressor(RegressorConfig),
    Vgg(VggConfig),
}

impl Architecture {
    pub fn tag(&self) -> ArchTag {
        match self {
            Architecture::UNet(_) => ArchTag::SB,
            Architecture::EncoderRegressor(_) => ArchTag::DE,
            Architecture::Vgg(_) => ArchTag::VGG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::UNet(c) => c.validate(),
            Architecture::EncoderRegressor(c) => c.validate(),
            Architecture::Vgg(c) => c.validate(),
        }
    }

    /// The U-Net encoder configuration, when the network has one.
    pub fn encoder(&self) -> Option<&UNetConfig> {
        match self {
            Architecture::UNet(c) => Some(c),
            Architecture::EncoderRegressor(c) => Some(&c.encoder),
            Architecture::Vgg(_) => None,
        }
    }
}
