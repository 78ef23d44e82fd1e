use crate::error::Result;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Compares the analytic gradient of a scalar-valued graph against central
/// finite differences at `point`. Returns the max over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone(), true);
    let out = f(&mut g, x)?;
    let grads = g.backward(out)?;
    let analytic = grads.get_or_zero(x);

    let eval = |p: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(p.clone(), false);
        let out = f(&mut g, x)?;
        g.value(out).item()
    };

    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference gradient of an arbitrary scalar function of a flat
/// parameter vector. Test oracle for losses that close over model state.
pub fn finite_difference<F>(f: &mut F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work)?;
        work[i] = orig - h;
        let minus = f(&work)?;
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Max relative disagreement between two gradient vectors, normalized by
/// `max(1, |a|)` per coordinate.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}
