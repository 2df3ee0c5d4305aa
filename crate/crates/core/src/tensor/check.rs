//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it is used to verify.

use std::sync::Arc;

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per input, see [`relative_error`].
    pub per_input: Vec<f64>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error <= tol
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)` over whole gradient tensors.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / analytic.norm().max(numeric.norm()).max(1e-6)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&g, &vars)?;
    let v = out.value().sum();
    Ok(v)
}

/// Central differences of the scalar `f` with respect to `inputs[index]`.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor], index: usize, h: f64) -> Result<Tensor>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let mut work = inputs.to_vec();
    let mut grad = Tensor::zeros(inputs[index].shape());
    for i in 0..inputs[index].numel() {
        let orig = inputs[index].data()[i];
        work[index].data_mut()[i] = orig + h;
        let plus = eval_scalar(f, &work)?;
        work[index].data_mut()[i] = orig - h;
        let minus = eval_scalar(f, &work)?;
        work[index].data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Compares reverse-mode gradients of a scalar-valued `f` against central
/// differences with step `h`, for every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|t| g.param(Arc::new(t.clone())))
        .collect();
    let out = f(&g, &vars)?;
    let root = if out.value().numel() == 1 {
        out
    } else {
        out.sum()
    };
    let grads = g.backward(root)?;
    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("tracked leaf has a gradient");
        let numeric = numeric_gradient(&f, inputs, i, h)?;
        per_input.push(relative_error(analytic, &numeric));
    }
    let max_relative_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_relative_error,
    })
}
