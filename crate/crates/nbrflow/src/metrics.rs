//! Evaluation metrics: bits per dimension, AUC-ROC, MMD, novelty scoring,
//! and neighborhood interpolation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::flow::PreprocessConfig;
use crate::neighbors::{knn_query_point, Neighborhood, NeighborhoodSource, PcaProjection};

/// One metric record; reports are emitted as JSON lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
    pub config_digest: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(name: &str, value: f64, n: usize, config_digest: &str, seed: u64) -> MetricReport {
        MetricReport {
            name: name.to_string(),
            value,
            n,
            config_digest: config_digest.to_string(),
            seed,
        }
    }
}

/// Negative log-likelihood per dimension in base 2, referred back to the
/// discrete pixel space when a logit preprocess is in play: the
/// preprocessing logdet joins the likelihood and each of the `levels`
/// quantization bins contributes log2(levels).
pub fn bits_per_dimension(
    log_lik_nats: f64,
    d: usize,
    preproc: Option<(&PreprocessConfig, f64)>,
) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    match preproc {
        None => -log_lik_nats / (d as f64 * ln2),
        Some((cfg, preproc_logdet)) => {
            -(log_lik_nats + preproc_logdet) / (d as f64 * ln2) + (cfg.levels as f64).log2()
        }
    }
}

/// AUC via the Mann-Whitney rank statistic: P(score_pos > score_neg) with
/// half credit for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::SizeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over tie groups
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = midrank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 =
        labels.iter().zip(&ranks).filter(|(l, _)| **l).map(|(_, r)| r).sum();
    let u = rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC curve points (fpr, tpr), threshold swept from high to low scores.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            if labels[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j + 1;
    }
    Ok(points)
}

/// Biased RBF-kernel MMD^2 estimate; zero iff the two multisets coincide.
pub fn mmd(samples_a: &[Vec<f64>], samples_b: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let k = |x: &[f64], y: &[f64]| -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        (-sq / (2.0 * bandwidth * bandwidth)).exp()
    };
    let mean_kernel = |xs: &[Vec<f64>], ys: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for x in xs {
            for y in ys {
                s += k(x, y);
            }
        }
        s / (xs.len() * ys.len()) as f64
    };
    let value = mean_kernel(samples_a, samples_a) + mean_kernel(samples_b, samples_b)
        - 2.0 * mean_kernel(samples_a, samples_b);
    // the biased estimator is nonnegative up to roundoff
    Ok(value.max(0.0))
}

/// Median pairwise distance over the pooled samples; the usual default
/// bandwidth for MMD.
pub fn median_heuristic_bandwidth(samples_a: &[Vec<f64>], samples_b: &[Vec<f64>]) -> Result<f64> {
    let pooled: Vec<&Vec<f64>> = samples_a.iter().chain(samples_b).collect();
    if pooled.len() < 2 {
        return Err(Error::EmptySet);
    }
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let sq: f64 =
                pooled[i].iter().zip(pooled[j].iter()).map(|(a, b)| (a - b).powi(2)).sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median < 1e-12 {
        return Err(Error::DegenerateData("zero median pairwise distance".into()));
    }
    Ok(median)
}

/// Conditional log-likelihood scores of `test` points, each conditioned on
/// its k nearest training points under the PCA index. Both the training
/// matrix and projection must come from the training split only.
pub fn novelty_scores(
    est: &Estimator,
    train: &Dataset,
    test: &Dataset,
    proj: &PcaProjection,
    k: usize,
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(test.n());
    for i in 0..test.n() {
        let nb = knn_query_point(train, proj, test.point(i), k)?;
        scores.push(est.conditional_log_likelihood(test.point(i), &nb)?);
    }
    Ok(scores)
}

/// Interpolation path between two equal-size neighborhoods: step t swaps the
/// first t members of `a` for the first t of `b`, giving k+1 conditioning
/// sets with samples drawn at each (member order follows dataset indices as
/// stored).
pub fn interpolate_neighborhoods(
    est: &Estimator,
    a: &Neighborhood,
    b: &Neighborhood,
    samples_per_step: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(Neighborhood, Vec<Vec<f64>>)>> {
    if a.k() != b.k() || a.dim() != b.dim() {
        return Err(Error::SizeMismatch(format!(
            "neighborhood shapes {}x{} vs {}x{}",
            a.k(),
            a.dim(),
            b.k(),
            b.dim()
        )));
    }
    let k = a.k();
    let mut steps = Vec::with_capacity(k + 1);
    for t in 0..=k {
        let mut indices = Vec::with_capacity(k);
        let mut rows = Vec::with_capacity(k);
        for m in 0..k {
            let src = if m < t { b } else { a };
            indices.push(src.member_indices()[m]);
            rows.push(src.member_vectors().row_slice(m).to_vec());
        }
        let nb = Neighborhood::new(
            indices,
            crate::autodiff::Tensor::from_rows(&rows)?,
            NeighborhoodSource::Manual,
        );
        let mut samples = Vec::with_capacity(samples_per_step);
        for _ in 0..samples_per_step {
            samples.push(est.conditional_sample(&nb, rng)?);
        }
        steps.push((nb, samples));
    }
    Ok(steps)
}

/// Spearman rank correlation of paired observations.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::SizeMismatch("need >= 2 paired observations".into()));
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = mid;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx).powi(2);
        dy += (ry[i] - my).powi(2);
    }
    if dx < 1e-12 || dy < 1e-12 {
        return Err(Error::DegenerateData("constant ranks in spearman".into()));
    }
    Ok(num / (dx * dy).sqrt())
}
