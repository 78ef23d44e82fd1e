use crate::data::Dataset;
use crate::error::{Error, Result};

use super::pca::PcaProjection;
use super::table::{Neighborhood, NeighborhoodSource};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Indices of the `k` nearest candidates to `query` in PCA space, ties
/// broken by smaller dataset index.
fn k_smallest(
    coords: &[Vec<f64>],
    query: &[f64],
    candidates: impl Iterator<Item = usize>,
    k: usize,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> =
        candidates.map(|i| (sq_dist(&coords[i], query), i)).collect();
    scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scored.truncate(k);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// k nearest training points to training point `query_index`, excluding the
/// query itself unless `include_self`, restricted to the query's class when
/// labels are supplied.
pub fn knn_query(
    data: &Dataset,
    proj: &PcaProjection,
    query_index: usize,
    k: usize,
    labels: Option<&[u32]>,
    include_self: bool,
) -> Result<Neighborhood> {
    let n = data.n();
    let reserve = usize::from(!include_self);
    if k + reserve > n {
        return Err(Error::KTooLarge { k, n });
    }
    let coords: Vec<Vec<f64>> = (0..n).map(|i| proj.project(data.point(i))).collect();
    let eligible = |i: usize| -> bool {
        if !include_self && i == query_index {
            return false;
        }
        match labels {
            Some(l) => l[i] == l[query_index],
            None => true,
        }
    };
    let available = (0..n).filter(|&i| eligible(i)).count();
    if available < k {
        return Err(match labels {
            Some(_) => Error::InsufficientClassMembers { needed: k, available },
            None => Error::KTooLarge { k, n },
        });
    }
    let idx = k_smallest(&coords, &coords[query_index], (0..n).filter(|&i| eligible(i)), k);
    Ok(Neighborhood::new(
        idx.clone(),
        data.gather(&idx),
        NeighborhoodSource::Knn,
    ))
}

/// k nearest training points to an arbitrary query vector (used when scoring
/// held-out points; the query is not in the dataset, so nothing is excluded).
pub fn knn_query_point(
    data: &Dataset,
    proj: &PcaProjection,
    point: &[f64],
    k: usize,
) -> Result<Neighborhood> {
    let n = data.n();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let coords: Vec<Vec<f64>> = (0..n).map(|i| proj.project(data.point(i))).collect();
    let q = proj.project(point);
    let idx = k_smallest(&coords, &q, 0..n, k);
    Ok(Neighborhood::new(
        idx.clone(),
        data.gather(&idx),
        NeighborhoodSource::Knn,
    ))
}
