use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Tensor,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Stops when the max centroid
/// shift drops below 1e-6 or after 300 iterations. Empty clusters are
/// re-seeded at the point farthest from its assigned centroid.
pub fn kmeans(points: &Tensor, k: usize, rng: &mut impl Rng) -> Result<KmeansResult> {
    let (n, d) = points.shape();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("k={k} invalid for n={n}")));
    }

    // k-means++ init
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points.row_slice(rng.gen_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row_slice(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centroids.push(points.row_slice(next).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points.row_slice(i), centroids.last().unwrap()));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut trace = Vec::new();
    for _ in 0..300 {
        // assignment step
        let mut objective = 0.0;
        for i in 0..n {
            let p = points.row_slice(i);
            let (best, dist) = centroids
                .iter()
                .enumerate()
                .map(|(c, cen)| (c, sq_dist(p, cen)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assignments[i] = best;
            objective += dist;
        }
        trace.push(objective);

        // update step
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignments[i]] += 1;
            for j in 0..d {
                sums[assignments[i]][j] += points.get(i, j);
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed at the globally farthest point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row_slice(a), &centroids[assignments[a]]);
                        let db = sq_dist(points.row_slice(b), &centroids[assignments[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[c] = points.row_slice(far).to_vec();
                shift = f64::INFINITY;
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < 1e-6 {
            break;
        }
    }

    // final assignment against converged centroids
    for i in 0..n {
        let p = points.row_slice(i);
        assignments[i] = centroids
            .iter()
            .enumerate()
            .min_by(|a, b| sq_dist(p, a.1).partial_cmp(&sq_dist(p, b.1)).unwrap())
            .map(|(c, _)| c)
            .unwrap();
    }
    Ok(KmeansResult {
        assignments,
        centroids: Tensor::from_rows(&centroids)?,
        objective_trace: trace,
    })
}
