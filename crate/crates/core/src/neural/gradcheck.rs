//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Largest relative error between the reverse-mode gradient of a scalar
/// function and central differences with step `FD_STEP`, over every element
/// of every input. `build` receives the inputs as trainable leaves.
pub fn grad_check<F>(inputs: &[Tensor], build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let orig = input.data()[e];
            work[k].data_mut()[e] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[k].data_mut()[e] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[k].data()[e], numeric));
        }
    }
    Ok(worst)
}

/// [`grad_check`] over every tensor of a parameter store.
pub fn grad_check_params<F>(params: &ParamStore, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let names: Vec<String> = params.names().cloned().collect();
    let inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    grad_check(&inputs, |g, vars| {
        let bound = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
        build(g, &bound)
    })
}
