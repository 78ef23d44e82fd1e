use nalgebra::DMatrix;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Principal-component projection fitted on training data.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    mean: Vec<f64>,
    /// `p x d`, rows orthonormal, sorted by decreasing eigenvalue.
    components: Vec<Vec<f64>>,
    explained_fraction: f64,
    threshold: f64,
}

impl PcaProjection {
    pub fn p(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_fraction(&self) -> f64 {
        self.explained_fraction
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(point.iter().zip(&self.mean))
                    .map(|(w, (x, m))| w * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn project_all(&self, data: &Tensor) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..data.rows())
            .map(|i| self.project(data.row_slice(i)))
            .collect();
        Tensor::from_rows(&rows).expect("projection rows consistent")
    }
}

/// Fits PCA keeping the smallest number of components whose cumulative
/// explained variance reaches `variance_threshold` (default 0.99).
pub fn fit_pca(data: &Tensor, variance_threshold: f64) -> Result<PcaProjection> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::DegenerateData("need at least 2 points".into()));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::Domain(format!(
            "variance threshold {variance_threshold} outside (0,1]"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let xa = data.get(i, a) - mean[a];
            for b in a..d {
                cov[(a, b)] += xa * (data.get(i, b) - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let total: f64 = (0..d).map(|j| cov[(j, j)]).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateData("all points identical".into()));
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut components = Vec::new();
    let mut explained = 0.0;
    for &j in &order {
        components.push((0..d).map(|i| eig.eigenvectors[(i, j)]).collect());
        explained += eig.eigenvalues[j].max(0.0);
        if explained / total >= variance_threshold {
            break;
        }
    }
    Ok(PcaProjection {
        mean,
        components,
        explained_fraction: (explained / total).min(1.0),
        threshold: variance_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_direction_data_gives_one_component() {
        let data = Tensor::from_rows(
            &(0..20).map(|i| vec![i as f64, 0.0, 0.0]).collect::<Vec<_>>(),
        )
        .unwrap();
        let proj = fit_pca(&data, 0.99).unwrap();
        assert_eq!(proj.p(), 1);
        assert!((proj.explained_fraction() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_needs_all_components() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let data = Tensor::from_rows(
            &(0..500)
                .map(|_| {
                    (0..3)
                        .map(|_| {
                            // Box-Muller keeps the oracle independent of rand_distr
                            let u1: f64 = rng.gen::<f64>().max(1e-12);
                            let u2: f64 = rng.gen();
                            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                        })
                        .collect()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let proj = fit_pca(&data, 0.99).unwrap();
        assert_eq!(proj.p(), 3);
    }

    #[test]
    fn rows_are_orthonormal() {
        let data = Tensor::from_rows(
            &(0..50)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    vec![t, 2.0 * t + (i % 3) as f64, t * t * 0.01]
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let proj = fit_pca(&data, 0.999).unwrap();
        for (a, ra) in proj.components().iter().enumerate() {
            for (b, rb) in proj.components().iter().enumerate() {
                let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reconstruction_error_equals_discarded_eigenvalue_mass() {
        // spectral identity: mean squared reconstruction error over the data
        // equals the sum of the discarded covariance eigenvalues
        let n = 400;
        let data = Tensor::from_rows(
            &(0..n)
                .map(|i| {
                    let t = (i as f64 / n as f64) * TWO_PI;
                    vec![3.0 * t.cos(), t.sin(), 0.2 * (2.0 * t).sin()]
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let proj = fit_pca(&data, 0.9).unwrap();
        assert!(proj.p() < 3);
        // residual via projection/reconstruction
        let mut sq = 0.0;
        for i in 0..n {
            let x = data.row_slice(i);
            let coeffs = proj.project(x);
            for j in 0..3 {
                let mut recon = proj.mean[j];
                for (c, comp) in coeffs.iter().zip(proj.components()) {
                    recon += c * comp[j];
                }
                sq += (x[j] - recon).powi(2);
            }
        }
        let residual = sq / (n - 1) as f64;
        // discarded eigenvalue mass from an independent covariance trace
        let full = fit_pca(&data, 1.0).unwrap();
        let kept_frac = proj.explained_fraction();
        let mean = &full.mean;
        let total: f64 = (0..3)
            .map(|j| {
                (0..n).map(|i| (data.get(i, j) - mean[j]).powi(2)).sum::<f64>()
                    / (n - 1) as f64
            })
            .sum();
        let discarded = total * (1.0 - kept_frac);
        assert!((residual - discarded).abs() < 1e-8, "{residual} vs {discarded}");
    }

    #[test]
    fn identical_points_rejected() {
        let data = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(fit_pca(&data, 0.99), Err(Error::DegenerateData(_))));
    }

    use crate::data::TWO_PI;
}
