use rand::Rng;

use crate::autodiff::{Graph, Init, ParamSlice, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

use super::mlp::{Mlp, MlpConfig};

/// Affine coupling layer: part A passes through, part B is scaled and
/// shifted by networks of A (and an optional conditioning vector).
/// Scale is parameterized as `exp(clamp . tanh(raw))` with a learnable
/// per-dimension clamp, so log-scales stay bounded.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    mask: Vec<bool>, // true => dimension belongs to part A (kept fixed)
    a_idx: Vec<usize>,
    b_idx: Vec<usize>,
    unperm: Vec<usize>, // restores original column order after [A | B] concat
    s_net: Mlp,
    t_net: Mlp,
    clamp: ParamSlice,
    cond_dim: usize,
}

impl CouplingLayer {
    pub fn new(
        mask: Vec<bool>,
        hidden: &[usize],
        cond_dim: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<CouplingLayer> {
        let a_idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let b_idx: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        if a_idx.is_empty() || b_idx.is_empty() {
            return Err(Error::ShapeMismatch(
                "coupling mask must keep and transform at least one dimension".into(),
            ));
        }
        let mut unperm = vec![0usize; mask.len()];
        for (pos, &j) in a_idx.iter().chain(b_idx.iter()).enumerate() {
            unperm[j] = pos;
        }
        let net_cfg = |_| MlpConfig {
            in_dim: a_idx.len() + cond_dim,
            hidden: hidden.to_vec(),
            out_dim: b_idx.len(),
            zero_init_last: true,
        };
        let s_net = Mlp::alloc(net_cfg(()), store, rng);
        let t_net = Mlp::alloc(net_cfg(()), store, rng);
        let clamp = store.alloc(1, b_idx.len(), Init::Const(1.0), rng);
        Ok(CouplingLayer { mask, a_idx, b_idx, unperm, s_net, t_net, clamp, cond_dim })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn check_cond(&self, cond_present: bool) -> Result<()> {
        if self.cond_dim > 0 && !cond_present {
            return Err(Error::MissingConditioning);
        }
        Ok(())
    }

    /// Log-scale of part B as a graph node: `clamp . tanh(s_net(input))`.
    fn log_scale(&self, g: &mut Graph, store: &ParamStore, net_in: Var) -> Result<Var> {
        let raw = self.s_net.forward(g, store, net_in)?;
        let th = g.tanh(raw)?;
        let clamp = g.param(store, self.clamp);
        g.mul(th, clamp)
    }

    /// Returns `(y, logdet)` with logdet shaped `n x 1`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        cond: Option<Var>,
    ) -> Result<(Var, Var)> {
        if x.cols != self.mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "coupling expects {} dims, got {}",
                self.mask.len(),
                x.cols
            )));
        }
        self.check_cond(cond.is_some())?;
        let xa = g.cols(x, &self.a_idx)?;
        let xb = g.cols(x, &self.b_idx)?;
        let net_in = match cond {
            Some(c) if self.cond_dim > 0 => g.concat_cols(&[xa, c])?,
            _ => xa,
        };
        let log_s = self.log_scale(g, store, net_in)?;
        let s = g.exp(log_s)?;
        let t = self.t_net.forward(g, store, net_in)?;
        let scaled = g.mul(xb, s)?;
        let yb = g.add(scaled, t)?;
        let stacked = g.concat_cols(&[xa, yb])?;
        let y = g.cols(stacked, &self.unperm)?;
        let logdet = g.sum_rows(log_s)?;
        Ok((y, logdet))
    }

    /// Value-level inverse: `x^B = (y^B - t) / s`.
    pub fn inverse(&self, store: &ParamStore, y: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        if y.cols() != self.mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "coupling expects {} dims, got {}",
                self.mask.len(),
                y.cols()
            )));
        }
        self.check_cond(cond.is_some())?;
        let n = y.rows();
        let mut ya = Tensor::zeros(n, self.a_idx.len());
        for i in 0..n {
            for (jj, &j) in self.a_idx.iter().enumerate() {
                ya.set(i, jj, y.get(i, j));
            }
        }
        let net_in = match cond {
            Some(c) if self.cond_dim > 0 => {
                let mut joined = Tensor::zeros(n, ya.cols() + c.cols());
                for i in 0..n {
                    for j in 0..ya.cols() {
                        joined.set(i, j, ya.get(i, j));
                    }
                    for j in 0..c.cols() {
                        joined.set(i, ya.cols() + j, c.get(i, j));
                    }
                }
                joined
            }
            _ => ya.clone(),
        };
        let raw = self.s_net.eval(store, &net_in)?;
        let t = self.t_net.eval(store, &net_in)?;
        let clamp = store.tensor(self.clamp);
        let mut x = y.clone();
        for i in 0..n {
            for (jj, &j) in self.b_idx.iter().enumerate() {
                let log_s = clamp.get(0, jj) * raw.get(i, jj).tanh();
                x.set(i, j, (y.get(i, j) - t.get(i, jj)) * (-log_s).exp());
            }
        }
        Ok(x)
    }
}

/// Alternating even/odd half-split mask; `phase` flips which half is kept.
pub fn alternating_mask(d: usize, phase: usize) -> Vec<bool> {
    (0..d).map(|j| (j + phase) % 2 == 0).collect()
}
