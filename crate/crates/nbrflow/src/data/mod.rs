//! Datasets: synthetic 2-D generators, CSV ingestion, and IDX image files.

mod generate;
mod idx;

pub use generate::{generate, DatasetKind, DatasetSpec};
pub use idx::{read_idx_images, read_idx_labels};

use std::f64::consts::PI;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// In-memory dataset: an `N x d` matrix with optional integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    points: Tensor,
    labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(points: Tensor, labels: Option<Vec<u32>>) -> Result<Dataset> {
        if let Some(l) = &labels {
            if l.len() != points.rows() {
                return Err(Error::SizeMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.rows()
                )));
            }
        }
        Ok(Dataset { points, labels })
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row_slice(i)
    }

    /// Rows `indices` as a new matrix.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(indices.len(), self.dim());
        for (r, &i) in indices.iter().enumerate() {
            for c in 0..self.dim() {
                out.set(r, c, self.points.get(i, c));
            }
        }
        out
    }

    /// Splits into (head, tail) at `n_head` rows, preserving order.
    pub fn split_at(&self, n_head: usize) -> (Dataset, Dataset) {
        let head: Vec<usize> = (0..n_head).collect();
        let tail: Vec<usize> = (n_head..self.n()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            points: self.gather(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Rows of one class only.
    pub fn class_subset(&self, class: u32) -> Result<Dataset> {
        let labels = self.labels.as_ref().ok_or(Error::MissingLabels)?;
        let idx: Vec<usize> = (0..self.n()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(self.subset(&idx))
    }

    /// Axis-aligned bounding box as (mins, maxs).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for i in 0..self.n() {
            for j in 0..d {
                let v = self.points.get(i, j);
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        (mins, maxs)
    }

    /// Canonical CSV encoding with header `x0,...,x{d-1}[,label]`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("x{j}"));
        }
        if self.labels.is_some() {
            out.push_str(",label");
        }
        out.push('\n');
        for i in 0..self.n() {
            for j in 0..d {
                if j > 0 {
                    out.push(',');
                }
                // round-trippable float formatting
                out.push_str(&format!("{:?}", self.points.get(i, j)));
            }
            if let Some(l) = &self.labels {
                out.push_str(&format!(",{}", l[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Dataset> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::EmptyData)?;
        let cols: Vec<&str> = header.split(',').collect();
        let has_label = cols.last() == Some(&"label");
        let d = if has_label { cols.len() - 1 } else { cols.len() };
        if d == 0 {
            return Err(Error::Parse("no feature columns".into()));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse(format!("row {}: wrong field count", ln + 2)));
            }
            let mut row = Vec::with_capacity(d);
            for f in &fields[..d] {
                row.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?,
                );
            }
            rows.push(row);
            if has_label {
                labels.push(
                    fields[d]
                        .trim()
                        .parse::<u32>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?,
                );
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        Dataset::new(Tensor::from_rows(&rows)?, has_label.then_some(labels))
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        Dataset::from_csv(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical CSV encoding, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv().as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_preserves_data() {
        let ds = Dataset::new(
            Tensor::from_rows(&[vec![0.1, -2.5], vec![1e-17, 3.25]]).unwrap(),
            Some(vec![0, 1]),
        )
        .unwrap();
        let back = Dataset::from_csv(&ds.to_csv()).unwrap();
        assert_eq!(back.points(), ds.points());
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.digest(), ds.digest());
    }

    #[test]
    fn class_subset_filters() {
        let ds = Dataset::new(
            Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            Some(vec![0, 1, 0]),
        )
        .unwrap();
        let sub = ds.class_subset(0).unwrap();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.point(1), &[2.0]);
    }
}
