use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Architecture, RegressorConfig, UNetConfig, VggConfig};
use super::{ModelBundle, BN_EPS, BN_MOMENTUM};
use crate::error::{ensure, Error, Result};
use crate::tensor::{BatchNormStats, Graph, Mode, Tensor, Var};

/// One recorded forward pass through a [`ModelBundle`].
///
/// Parameters are bound lazily as graph leaves; batch-norm running
/// statistics are updated on a private copy so the model stays untouched
/// until [`ModelBundle::set_norm_stats`] is called with [`Self::norm_stats`].
pub struct ForwardPass<'m> {
    pub graph: Graph,
    pub output: Var,
    model: &'m ModelBundle,
    mode: Mode,
    rng: ChaCha8Rng,
    bound: IndexMap<String, Var>,
    norms: IndexMap<String, BatchNormStats>,
}

impl<'m> ForwardPass<'m> {
    fn new(model: &'m ModelBundle, input: &Tensor, mode: Mode, seed: u64) -> Self {
        let mut graph = Graph::new();
        let output = graph.constant(input.clone());
        Self { graph, output, model, mode, rng: ChaCha8Rng::seed_from_u64(seed), bound: IndexMap::new(), norms: IndexMap::new() }
    }

    fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.model.param(name)?.clone();
        let v = self.graph.leaf(t.with_requires_grad(true));
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv(&mut self, name: &str, x: Var, padding: usize) -> Result<Var> {
        let w = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        self.graph.conv2d(x, w, Some(b), 1, padding)
    }

    fn norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        let mut stats = match self.norms.get(name) {
            Some(s) => s.clone(),
            None => self
                .model
                .norms
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnknownParameter(format!("{name} (batch-norm state)")))?,
        };
        let y = self.graph.batch_norm(x, gamma, beta, &mut stats, self.mode, BN_MOMENTUM, BN_EPS)?;
        self.norms.insert(name.to_string(), stats);
        Ok(y)
    }

    fn conv_bn_relu(&mut self, conv: &str, norm: &str, x: Var) -> Result<Var> {
        let y = self.conv(conv, x, 1)?;
        let y = self.norm(norm, y)?;
        self.graph.relu(y)
    }

    fn double_conv(&mut self, name: &str, x: Var) -> Result<Var> {
        let y = self.conv_bn_relu(&format!("{name}.conv1"), &format!("{name}.bn1"), x)?;
        self.conv_bn_relu(&format!("{name}.conv2"), &format!("{name}.bn2"), y)
    }

    fn dense(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        self.graph.linear(x, w, Some(b))
    }

    /// Encoder blocks and bottleneck; returns the bottleneck output and skips.
    fn encoder(&mut self, cfg: &UNetConfig, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut h = x;
        for level in 0..cfg.depth {
            let s = self.double_conv(&format!("enc{level}"), h)?;
            skips.push(s);
            h = self.graph.max_pool2(s)?;
        }
        let b = self.double_conv("bottleneck", h)?;
        let p = cfg.dropout_p;
        let mode = self.mode;
        let b = self.graph.dropout(b, p, mode, &mut self.rng)?;
        Ok((b, skips))
    }

    fn decoder(&mut self, cfg: &UNetConfig, bottom: Var, skips: &[Var]) -> Result<Var> {
        let mut h = bottom;
        for level in (0..cfg.depth).rev() {
            let w = self.p(&format!("dec{level}.up.weight"))?;
            let b = self.p(&format!("dec{level}.up.bias"))?;
            let up = self.graph.conv_transpose2x2(h, w, Some(b))?;
            let cat = self.graph.concat_channels(skips[level], up)?;
            h = self.double_conv(&format!("dec{level}"), cat)?;
        }
        let logits = self.conv("head", h, 0)?;
        self.graph.sigmoid(logits)
    }

    fn head(&mut self, layers: usize, features: Var) -> Result<Var> {
        let mut h = self.graph.flatten(features)?;
        for i in 1..=layers {
            let d = self.dense(&format!("fc{i}"), h)?;
            let n = self.norm(&format!("fc{i}.bn"), d)?;
            h = self.graph.relu(n)?;
        }
        self.dense("fc_out", h)
    }

    fn vgg_features(&mut self, cfg: &VggConfig, x: Var) -> Result<Var> {
        let mut h = x;
        for (stage, &convs) in cfg.convs_per_stage.iter().enumerate() {
            for i in 1..=convs {
                h = self.conv_bn_relu(&format!("stage{}.conv{i}", stage + 1), &format!("stage{}.bn{i}", stage + 1), h)?;
            }
            h = self.graph.max_pool2(h)?;
        }
        Ok(h)
    }

    fn run(&mut self, input: Var, stop_at_encoder: bool) -> Result<Var> {
        let [h, w] = {
            let s = self.graph.shape(input);
            ensure!(s.len() == 4, Shape, "model input must be NCHW, got {s:?}");
            [s[2], s[3]]
        };
        let arch = self.model.arch.clone();
        match &arch {
            Architecture::UNet(cfg) => {
                cfg.check_input(h, w)?;
                let (b, skips) = self.encoder(cfg, input)?;
                if stop_at_encoder {
                    return Ok(b);
                }
                self.decoder(cfg, b, &skips)
            }
            Architecture::EncoderRegressor(RegressorConfig { encoder, fc_layers, input_hw, .. }) => {
                check_fixed_input(*input_hw, h, w)?;
                let (b, _) = self.encoder(encoder, input)?;
                if stop_at_encoder {
                    return Ok(b);
                }
                self.head(*fc_layers, b)
            }
            Architecture::Vgg(cfg) => {
                cfg.validate()?;
                check_fixed_input(cfg.input_hw, h, w)?;
                let f = self.vgg_features(cfg, input)?;
                if stop_at_encoder {
                    return Ok(f);
                }
                self.head(cfg.fc_layers, f)
            }
        }
    }

    /// Gradients of every bound parameter after [`Graph::backward`].
    pub fn param_grads(&self) -> IndexMap<String, Vec<f64>> {
        self.bound.iter().filter_map(|(name, v)| self.graph.grad(*v).map(|g| (name.clone(), g.to_vec()))).collect()
    }

    /// Batch-norm statistics as updated by this pass (train mode).
    pub fn norm_stats(&self) -> IndexMap<String, BatchNormStats> {
        self.norms.clone()
    }

    pub fn output_value(&self) -> &Tensor {
        self.graph.value(self.output)
    }
}

fn check_fixed_input(expected: [usize; 2], h: usize, w: usize) -> Result<()> {
    ensure!(expected == [h, w], Shape, "model was configured for {}x{} input, got {h}x{w}", expected[0], expected[1]);
    Ok(())
}

impl ModelBundle {
    /// Records a full forward pass of `input` (`[N, C, H, W]`).
    ///
    /// `seed` drives dropout in train mode.
    pub fn forward(&self, input: &Tensor, mode: Mode, seed: u64) -> Result<ForwardPass<'_>> {
        self.forward_impl(input, mode, seed, false)
    }

    /// Runs only the encoder and bottleneck (or the VGG convolution stages).
    pub fn forward_features(&self, input: &Tensor, mode: Mode, seed: u64) -> Result<ForwardPass<'_>> {
        self.forward_impl(input, mode, seed, true)
    }

    fn forward_impl(&self, input: &Tensor, mode: Mode, seed: u64, features: bool) -> Result<ForwardPass<'_>> {
        let mut pass = ForwardPass::new(self, input, mode, seed);
        pass.output = pass.run(pass.output, features)?;
        Ok(pass)
    }

    /// Eval-mode output for `input`.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, Mode::Eval, 0)?.output_value().clone())
    }
}
