//! Central finite-difference check of tape gradients.

use crate::error::NumericsError;
use crate::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_error: f64,
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of `f` against central differences with step
/// `eps` on every coordinate of every parameter. `f` receives a fresh tape
/// and the parameters as leaves, and must be deterministic.
pub fn grad_check<E, F>(params: &[Tensor<f64>], f: F, eps: f64) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var, E>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64, E> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let v = tape.item(loss);
        Ok(v)
    };

    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.tensor(v)).collect()
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut worst = 0.0f64;
        for j in 0..params[i].len() {
            let orig = params[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
        per_param.push(worst);
    }
    let max_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_error,
    })
}
