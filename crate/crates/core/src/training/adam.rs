use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::models::ModelBundle;
use crate::tensor::Tensor;

/// Adam with bias correction and L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    #[serde(skip)]
    first: IndexMap<String, Vec<f64>>,
    #[serde(skip)]
    second: IndexMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn adam(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers of `name`, once it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.first.get(name)?.as_slice(), self.second.get(name)?.as_slice()))
    }

    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            InvalidArgument,
            "learning rate must be finite and non-negative"
        );
        ensure!(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            InvalidArgument,
            "weight decay must be finite and non-negative"
        );
        ensure!((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2), InvalidArgument, "betas must lie in [0, 1)");
        ensure!(self.eps > 0.0, InvalidArgument, "eps must be positive");
        Ok(())
    }

    /// One update of every parameter not listed in `frozen`.
    pub fn update(
        &mut self,
        params: &mut IndexMap<String, Tensor>,
        grads: &IndexMap<String, Vec<f64>>,
        frozen: &[String],
    ) -> Result<()> {
        self.validate()?;
        let active: Vec<&String> = params.keys().filter(|n| !frozen.contains(n)).collect();
        for name in &active {
            let g = grads.get(*name).ok_or_else(|| Error::Graph(format!("no gradient for parameter `{name}`")))?;
            ensure!(
                g.len() == params[*name].numel(),
                Shape,
                "gradient of `{name}` has {} entries, parameter {}",
                g.len(),
                params[*name].numel()
            );
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}` (entry {i} = {})", g[i])));
            }
        }
        let active: Vec<String> = active.into_iter().cloned().collect();
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for name in active {
            let p = params.get_mut(&name).expect("checked above").data_mut();
            let g = &grads[&name];
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.second.entry(name).or_insert_with(|| vec![0.0; p.len()]);
            for i in 0..p.len() {
                let gi = g[i] + self.weight_decay * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Apply one Adam step to the trainable parameters of `model`.
pub fn adam_step(model: &mut ModelBundle, grads: &IndexMap<String, Vec<f64>>, state: &mut OptimState) -> Result<()> {
    let frozen = model.frozen().to_vec();
    state.update(model.params_mut(), grads, &frozen)
}
