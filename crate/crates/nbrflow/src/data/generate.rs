use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::Result;

use super::{Dataset, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Moons,
    Rings,
    GaussianGrid,
    Pinwheel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise: f64,
}

/// Deterministic (given the RNG) 2-D synthetic datasets with class labels.
pub fn generate(spec: &DatasetSpec, rng: &mut impl Rng) -> Result<Dataset> {
    let normal = Normal::new(0.0, spec.noise.max(0.0)).expect("valid noise");
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    match spec.kind {
        DatasetKind::Moons => {
            for i in 0..spec.n {
                let t = rng.gen::<f64>() * std::f64::consts::PI;
                let (x, y, label) = if i % 2 == 0 {
                    (t.cos(), t.sin(), 0)
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin(), 1)
                };
                rows.push(vec![x + normal.sample(rng), y + normal.sample(rng)]);
                labels.push(label);
            }
        }
        DatasetKind::Rings => {
            for i in 0..spec.n {
                let t = rng.gen::<f64>() * TWO_PI;
                let (r, label) = if i % 2 == 0 { (1.0, 0) } else { (2.0, 1) };
                rows.push(vec![
                    r * t.cos() + normal.sample(rng),
                    r * t.sin() + normal.sample(rng),
                ]);
                labels.push(label);
            }
        }
        DatasetKind::GaussianGrid => {
            // 3x3 grid of blobs at {0,1,2}^2, class = cell index
            for i in 0..spec.n {
                let cell = (i % 9) as u32;
                let (cx, cy) = ((cell % 3) as f64, (cell / 3) as f64);
                rows.push(vec![cx + normal.sample(rng), cy + normal.sample(rng)]);
                labels.push(cell);
            }
        }
        DatasetKind::Pinwheel => {
            let arms = 5usize;
            for i in 0..spec.n {
                let arm = i % arms;
                let r = rng.gen::<f64>().abs().sqrt() + 0.3;
                let base = arm as f64 * TWO_PI / arms as f64;
                let angle = base + 0.6 * r + spec.noise * normal.sample(rng);
                rows.push(vec![
                    r * angle.cos() + normal.sample(rng),
                    r * angle.sin() + normal.sample(rng),
                ]);
                labels.push(arm as u32);
            }
        }
    }
    Dataset::new(Tensor::from_rows(&rows)?, Some(labels))
}
