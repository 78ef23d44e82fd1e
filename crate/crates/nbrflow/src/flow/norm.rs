use rand::Rng;

use crate::autodiff::{Graph, Init, ParamSlice, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Batch-norm reformulated as an invertible per-dimension affine map:
/// `y = x * exp(log_scale) + shift`, logdet = sum(log_scale).
#[derive(Debug, Clone)]
pub struct InvertibleNorm {
    pub log_scale: ParamSlice,
    pub shift: ParamSlice,
    pub initialized: bool,
}

impl InvertibleNorm {
    pub fn new(d: usize, store: &mut ParamStore, rng: &mut impl Rng) -> InvertibleNorm {
        let log_scale = store.alloc(1, d, Init::Zeros, rng);
        let shift = store.alloc(1, d, Init::Zeros, rng);
        InvertibleNorm { log_scale, shift, initialized: false }
    }

    /// Data-dependent initialization: after this, the layer output on `batch`
    /// has per-dimension mean 0 and variance 1.
    pub fn init(&mut self, store: &mut ParamStore, batch: &Tensor) -> Result<()> {
        if self.initialized {
            return Err(Error::AlreadyInitialized);
        }
        let (n, d) = batch.shape();
        if n < 2 {
            return Err(Error::DegenerateBatch("need at least 2 rows".into()));
        }
        if d != self.log_scale.cols {
            return Err(Error::ShapeMismatch(format!(
                "norm init: layer dim {} vs batch dim {}",
                self.log_scale.cols, d
            )));
        }
        let mut log_scale = vec![0.0; d];
        let mut shift = vec![0.0; d];
        for j in 0..d {
            let mean: f64 = (0..n).map(|i| batch.get(i, j)).sum::<f64>() / n as f64;
            let var: f64 =
                (0..n).map(|i| (batch.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            let var = if var < 1e-12 {
                eprintln!("warning: zero-variance dimension {j} in norm init, stabilizing");
                var + 1e-6
            } else {
                var
            };
            let std = var.sqrt();
            log_scale[j] = -std.ln();
            shift[j] = -mean / std;
        }
        store.slice_mut(self.log_scale).copy_from_slice(&log_scale);
        store.slice_mut(self.shift).copy_from_slice(&shift);
        self.initialized = true;
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let ls = g.param(store, self.log_scale);
        let sh = g.param(store, self.shift);
        let scale = g.exp(ls)?;
        let scaled = g.mul(x, scale)?;
        let y = g.add(scaled, sh)?;
        let ld = g.sum_rows(ls)?; // 1 x 1
        let logdet = g.broadcast_rows(ld, x.rows)?;
        Ok((y, logdet))
    }

    pub fn inverse(&self, store: &ParamStore, y: &Tensor) -> Result<Tensor> {
        let ls = store.tensor(self.log_scale);
        let sh = store.tensor(self.shift);
        let mut x = y.clone();
        for i in 0..y.rows() {
            for j in 0..y.cols() {
                x.set(i, j, (y.get(i, j) - sh.get(0, j)) * (-ls.get(0, j)).exp());
            }
        }
        Ok(x)
    }
}
