use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};

use super::kmeans::kmeans;
use super::knn::knn_query;
use super::pca::PcaProjection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborhoodSource {
    Knn,
    ClusterPrototype,
    Manual,
}

/// Fixed, immutable set of k neighbor vectors with provenance indices.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    member_indices: Vec<usize>,
    member_vectors: Tensor,
    source: NeighborhoodSource,
}

impl Neighborhood {
    pub fn new(member_indices: Vec<usize>, member_vectors: Tensor, source: NeighborhoodSource) -> Neighborhood {
        assert_eq!(member_indices.len(), member_vectors.rows());
        Neighborhood { member_indices, member_vectors, source }
    }

    pub fn k(&self) -> usize {
        self.member_indices.len()
    }

    pub fn dim(&self) -> usize {
        self.member_vectors.cols()
    }

    pub fn member_indices(&self) -> &[usize] {
        &self.member_indices
    }

    pub fn member_vectors(&self) -> &Tensor {
        &self.member_vectors
    }

    pub fn source(&self) -> NeighborhoodSource {
        self.source
    }

    /// Member vectors flattened to a single `1 x (k*d)` row in member order.
    pub fn flattened(&self) -> Vec<f64> {
        self.member_vectors.data().to_vec()
    }

    pub fn centroid(&self) -> Vec<f64> {
        let (k, d) = self.member_vectors.shape();
        (0..d)
            .map(|j| (0..k).map(|i| self.member_vectors.get(i, j)).sum::<f64>() / k as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableMode {
    Knn,
    Cluster,
}

/// One neighborhood per training point (kNN mode) or per cluster
/// (cluster mode). Frozen once built.
#[derive(Debug, Clone)]
pub struct NeighborhoodTable {
    entries: Vec<Neighborhood>,
    mode: TableMode,
    k: usize,
    class_restricted: bool,
    pca_p: usize,
    pca_threshold: f64,
    dataset_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    mode: TableMode,
    k: usize,
    n_entries: usize,
    class_restricted: bool,
    pca: PcaHeader,
    dataset_digest: String,
}

#[derive(Serialize, Deserialize)]
struct PcaHeader {
    p: usize,
    threshold: f64,
}

impl NeighborhoodTable {
    /// Assembles a table from pre-built neighborhoods (manual construction,
    /// e.g. for tests or ad-hoc conditioning sets).
    pub fn from_parts(
        entries: Vec<Neighborhood>,
        mode: TableMode,
        k: usize,
        class_restricted: bool,
        pca_p: usize,
        pca_threshold: f64,
        dataset_digest: String,
    ) -> NeighborhoodTable {
        NeighborhoodTable { entries, mode, k, class_restricted, pca_p, pca_threshold, dataset_digest }
    }

    pub fn entries(&self) -> &[Neighborhood] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Neighborhood> {
        self.entries
            .get(id)
            .ok_or(Error::BadNeighborhoodId { id, len: self.entries.len() })
    }

    pub fn mode(&self) -> TableMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dataset_digest(&self) -> &str {
        &self.dataset_digest
    }

    /// SHA-256 of the serialized table.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let header = TableHeader {
            mode: self.mode,
            k: self.k,
            n_entries: self.entries.len(),
            class_restricted: self.class_restricted,
            pca: PcaHeader { p: self.pca_p, threshold: self.pca_threshold },
            dataset_digest: self.dataset_digest.clone(),
        };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
        out.extend_from_slice(&hjson);
        for e in &self.entries {
            out.extend_from_slice(&(e.member_indices.len() as u32).to_le_bytes());
            for &i in &e.member_indices {
                out.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Loads a table and materializes member vectors from `data`, verifying
    /// the recorded dataset digest.
    pub fn load(path: &Path, data: &Dataset) -> Result<NeighborhoodTable> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut at = 0usize;
        let take_u32 = |bytes: &[u8], at: &mut usize| -> Result<u32> {
            let s: [u8; 4] = bytes
                .get(*at..*at + 4)
                .and_then(|s| s.try_into().ok())
                .ok_or_else(|| Error::Parse("truncated table file".into()))?;
            *at += 4;
            Ok(u32::from_le_bytes(s))
        };
        let hlen = take_u32(&bytes, &mut at)? as usize;
        let header: TableHeader = serde_json::from_slice(
            bytes
                .get(at..at + hlen)
                .ok_or_else(|| Error::Parse("truncated table header".into()))?,
        )
        .map_err(|e| Error::Parse(e.to_string()))?;
        at += hlen;
        if header.dataset_digest != data.digest() {
            return Err(Error::DigestMismatch {
                found: data.digest(),
                expected: header.dataset_digest,
            });
        }
        let source = match header.mode {
            TableMode::Knn => NeighborhoodSource::Knn,
            TableMode::Cluster => NeighborhoodSource::ClusterPrototype,
        };
        let mut entries = Vec::with_capacity(header.n_entries);
        for _ in 0..header.n_entries {
            let m = take_u32(&bytes, &mut at)? as usize;
            let mut idx = Vec::with_capacity(m);
            for _ in 0..m {
                let i = take_u32(&bytes, &mut at)? as usize;
                if i >= data.n() {
                    return Err(Error::Parse(format!("index {i} out of range")));
                }
                idx.push(i);
            }
            entries.push(Neighborhood::new(idx.clone(), data.gather(&idx), source));
        }
        Ok(NeighborhoodTable {
            entries,
            mode: header.mode,
            k: header.k,
            class_restricted: header.class_restricted,
            pca_p: header.pca.p,
            pca_threshold: header.pca.threshold,
            dataset_digest: header.dataset_digest,
        })
    }
}

/// Pre-computes one kNN neighborhood per training point.
pub fn build_table(
    data: &Dataset,
    proj: &PcaProjection,
    k: usize,
    labels: Option<&[u32]>,
    include_self: bool,
) -> Result<NeighborhoodTable> {
    let mut entries = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        entries.push(knn_query(data, proj, i, k, labels, include_self)?);
    }
    Ok(NeighborhoodTable {
        entries,
        mode: TableMode::Knn,
        k,
        class_restricted: labels.is_some(),
        pca_p: proj.p(),
        pca_threshold: proj.threshold(),
        dataset_digest: data.digest(),
    })
}

/// Clusters the data in PCA space and builds one neighborhood per cluster
/// from the prototypes nearest its centroid.
pub fn cluster_neighborhoods(
    data: &Dataset,
    proj: &PcaProjection,
    n_clusters: usize,
    n_prototypes: usize,
    rng: &mut impl Rng,
) -> Result<NeighborhoodTable> {
    let coords = proj.project_all(data.points());
    let res = kmeans(&coords, n_clusters, rng)?;
    let mut entries = Vec::with_capacity(n_clusters);
    for c in 0..n_clusters {
        let members: Vec<usize> =
            (0..data.n()).filter(|&i| res.assignments[i] == c).collect();
        let centroid = res.centroids.row_slice(c);
        let mut scored: Vec<(f64, usize)> = members
            .iter()
            .map(|&i| {
                let d: f64 = coords
                    .row_slice(i)
                    .iter()
                    .zip(centroid)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                (d, i)
            })
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scored.truncate(n_prototypes);
        let idx: Vec<usize> = scored.into_iter().map(|(_, i)| i).collect();
        if idx.is_empty() {
            return Err(Error::DegenerateData(format!("cluster {c} ended up empty")));
        }
        entries.push(Neighborhood::new(
            idx.clone(),
            data.gather(&idx),
            NeighborhoodSource::ClusterPrototype,
        ));
    }
    Ok(NeighborhoodTable {
        entries,
        mode: TableMode::Cluster,
        k: n_prototypes,
        class_restricted: false,
        pca_p: proj.p(),
        pca_threshold: proj.threshold(),
        dataset_digest: data.digest(),
    })
}

/// Uniform draw over table entries: the 1/N marginalization of the
/// neighborhood mixture.
pub fn sample_neighborhood<'t>(
    table: &'t NeighborhoodTable,
    rng: &mut impl Rng,
) -> Result<&'t Neighborhood> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    Ok(&table.entries[rng.gen_range(0..table.len())])
}
