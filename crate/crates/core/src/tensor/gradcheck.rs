use serde::Serialize;

use super::{Graph, Tensor, Var};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

const GRADIENT_FLOOR: f64 = 1e-6;

/// Norm-wise relative error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-6)`.
///
/// The floor keeps gradients that are identically zero (e.g. a bias feeding a
/// batch norm) from being judged on central-difference round-off alone.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(GRADIENT_FLOOR)
}

fn eval<F>(inputs: &[Tensor], loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
    let loss = loss_fn(&mut graph, &vars)?;
    Ok(graph.value(loss).data()[0])
}

/// Central-difference gradient of a scalar loss with respect to `inputs[which]`.
pub fn central_difference<F>(inputs: &[Tensor], which: usize, loss_fn: &F, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut grad = vec![0.0; inputs[which].numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + step;
        let plus = eval(&work, loss_fn)?;
        work[which].data_mut()[i] = orig - step;
        let minus = eval(&work, loss_fn)?;
        work[which].data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Analytic gradients of `loss_fn` for every named input, via [`Graph::backward`].
pub fn analytic_gradients<F>(inputs: &[Tensor], loss_fn: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = loss_fn(&mut graph, &vars)?;
    graph.backward(loss)?;
    Ok(vars.iter().zip(inputs).map(|(v, t)| graph.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)).collect())
}

/// Compares supplied analytic gradients against central differences.
pub fn compare_gradients<F>(
    names: &[&str],
    inputs: &[Tensor],
    analytic: &[Vec<f64>],
    loss_fn: &F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    ensure!(
        names.len() == inputs.len() && analytic.len() == inputs.len(),
        InvalidArgument,
        "grad_check needs one name and one analytic gradient per input"
    );
    let mut params = Vec::with_capacity(inputs.len());
    for (i, name) in names.iter().enumerate() {
        let numeric = central_difference(inputs, i, loss_fn, step)?;
        let err = relative_error(&analytic[i], &numeric);
        params.push(ParamCheck { name: name.to_string(), max_rel_err: err, passed: err < tolerance });
    }
    Ok(GradCheckReport { tolerance, params })
}

/// Checks the backward pass of `loss_fn` against central differences for
/// every input tensor. `loss_fn` must reduce to a scalar.
pub fn grad_check<F>(named_inputs: &[(&str, Tensor)], loss_fn: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let names: Vec<&str> = named_inputs.iter().map(|(n, _)| *n).collect();
    let inputs: Vec<Tensor> = named_inputs.iter().map(|(_, t)| t.clone()).collect();
    let analytic = analytic_gradients(&inputs, &loss_fn)?;
    compare_gradients(&names, &inputs, &analytic, &loss_fn, step, tolerance)
}
