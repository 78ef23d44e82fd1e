use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, ParamSlice, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MlpConfig {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    /// Zero-init the final layer so the net starts as the zero function.
    pub zero_init_last: bool,
}

/// Fully connected tanh network; parameters live in a shared [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Mlp {
    pub config: MlpConfig,
    layers: Vec<(ParamSlice, ParamSlice)>, // (weight [in x out], bias [1 x out])
}

impl Mlp {
    pub fn alloc(config: MlpConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Mlp {
        let mut dims = vec![config.in_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(config.out_dim);
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let init = if config.zero_init_last && l == n_layers - 1 {
                Init::Zeros
            } else {
                Init::Uniform((1.0 / fan_in as f64).sqrt())
            };
            let w = store.alloc(fan_in, fan_out, init, rng);
            let b = store.alloc(1, fan_out, Init::Zeros, rng);
            layers.push((w, b));
        }
        Mlp { config, layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(store, *w);
            let bv = g.param(store, *b);
            h = g.matmul(h, wv)?;
            h = g.add(h, bv)?;
            if l + 1 < self.layers.len() {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Value-only forward pass, used by the inverse path where no gradients
    /// are needed.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let wt = store.tensor(*w);
            let bt = store.tensor(*b);
            let mut out = h.matmul(&wt)?;
            for i in 0..out.rows() {
                for j in 0..out.cols() {
                    let v = out.get(i, j) + bt.get(0, j);
                    out.set(i, j, v);
                }
            }
            if l + 1 < self.layers.len() {
                out = out.map(f64::tanh);
            }
            h = out;
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_and_value_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::alloc(
            MlpConfig { in_dim: 3, hidden: vec![8, 8], out_dim: 2, zero_init_last: false },
            &mut store,
            &mut rng,
        );
        let x = Tensor::new(4, 3, (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = mlp.forward(&mut g, &store, xv).unwrap();
        let direct = mlp.eval(&store, &x).unwrap();
        assert_eq!(g.value(out), &direct);
    }

    #[test]
    fn zero_init_last_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let mlp = Mlp::alloc(
            MlpConfig { in_dim: 2, hidden: vec![4], out_dim: 3, zero_init_last: true },
            &mut store,
            &mut rng,
        );
        let out = mlp.eval(&store, &Tensor::row(vec![0.7, -0.2])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}
