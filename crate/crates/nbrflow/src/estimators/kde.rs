use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::LN_2PI;

/// Gaussian KDE: a uniform mixture of isotropic Gaussians centered on the
/// training points.
#[derive(Debug, Clone)]
pub struct KdeConfig {
    bandwidth: f64,
    data: Tensor,
}

impl KdeConfig {
    pub fn new(data: Tensor, bandwidth: f64) -> Result<KdeConfig> {
        if data.rows() == 0 {
            return Err(Error::EmptyData);
        }
        if !(bandwidth > 0.0) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KdeConfig { bandwidth, data })
    }

    /// Bandwidth from Scott's rule: `sigma = n^(-1/(d+4)) * std`, with the
    /// pooled (root-mean) per-dimension standard deviation.
    pub fn with_scott_bandwidth(data: Tensor) -> Result<KdeConfig> {
        let bw = scott_bandwidth(&data)?;
        KdeConfig::new(data, bw)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }
}

pub fn scott_bandwidth(data: &Tensor) -> Result<f64> {
    let (n, d) = data.shape();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut pooled_var = 0.0;
    for j in 0..d {
        let mean: f64 = (0..n).map(|i| data.get(i, j)).sum::<f64>() / n as f64;
        pooled_var +=
            (0..n).map(|i| (data.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
    }
    let std = (pooled_var / d as f64).sqrt();
    if std < 1e-12 {
        return Err(Error::DegenerateData("zero-variance data for Scott's rule".into()));
    }
    Ok((n as f64).powf(-1.0 / (d as f64 + 4.0)) * std)
}

/// `log[(1/N) sum_i N(x | x_i, sigma^2 I)]` via log-sum-exp, stable for any
/// spread of per-component log-densities.
pub fn kde_log_density(cfg: &KdeConfig, x: &[f64]) -> Result<f64> {
    let (n, d) = cfg.data.shape();
    if x.len() != d {
        return Err(Error::ShapeMismatch(format!("kde query dim {} vs data dim {d}", x.len())));
    }
    let sigma = cfg.bandwidth;
    let norm = -(d as f64) * (sigma.ln() + 0.5 * LN_2PI);
    let mut comps = Vec::with_capacity(n);
    for i in 0..n {
        let sq: f64 = (0..d).map(|j| ((x[j] - cfg.data.get(i, j)) / sigma).powi(2)).sum();
        comps.push(norm - 0.5 * sq);
    }
    Ok(log_mean_exp(&comps))
}

/// One draw: uniform data point plus isotropic Gaussian noise.
pub fn kde_sample(cfg: &KdeConfig, rng: &mut impl Rng) -> Vec<f64> {
    let (n, d) = cfg.data.shape();
    let i = rng.gen_range(0..n);
    (0..d)
        .map(|j| {
            let eps: f64 = StandardNormal.sample(rng);
            cfg.data.get(i, j) + cfg.bandwidth * eps
        })
        .collect()
}

pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_mean_exp(vals: &[f64]) -> f64 {
    log_sum_exp(vals) - (vals.len() as f64).ln()
}
