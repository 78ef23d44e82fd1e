use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

use super::coupling::{alternating_mask, CouplingLayer};
use super::norm::InvertibleNorm;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Architecture descriptor; construction from a config is deterministic, so
/// a checkpoint only needs this plus the flat parameter payload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlowConfig {
    pub input_dim: usize,
    pub n_couplings: usize,
    pub hidden: Vec<usize>,
    /// Conditioning vector width fed to every coupling net (0 = none).
    pub cond_dim: usize,
    pub use_norm: bool,
    pub use_permute: bool,
}

impl FlowConfig {
    pub fn unconditional(input_dim: usize) -> FlowConfig {
        FlowConfig {
            input_dim,
            n_couplings: 6,
            hidden: vec![64, 64],
            cond_dim: 0,
            use_norm: true,
            use_permute: true,
        }
    }

    pub fn conditioned(input_dim: usize, cond_dim: usize) -> FlowConfig {
        FlowConfig { cond_dim, ..FlowConfig::unconditional(input_dim) }
    }
}

pub enum Layer {
    Coupling(CouplingLayer),
    Norm(InvertibleNorm),
    Permute(Vec<usize>),
}

/// Composition of invertible layers mapping data to latent codes.
pub struct FlowModel {
    pub config: FlowConfig,
    pub layers: Vec<Layer>,
}

impl FlowModel {
    pub fn new(config: FlowConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<FlowModel> {
        let d = config.input_dim;
        if config.n_couplings > 0 && d < 2 {
            return Err(Error::ShapeMismatch(
                "coupling layers need at least 2 dimensions".into(),
            ));
        }
        let mut layers = Vec::new();
        for i in 0..config.n_couplings {
            // masks alternate so part A and B swap roles between couplings
            let mask = alternating_mask(d, i % 2);
            layers.push(Layer::Coupling(CouplingLayer::new(
                mask,
                &config.hidden,
                config.cond_dim,
                store,
                rng,
            )?));
            if config.use_norm {
                layers.push(Layer::Norm(InvertibleNorm::new(d, store, rng)));
            }
            if config.use_permute && i + 1 < config.n_couplings {
                layers.push(Layer::Permute((0..d).rev().collect()));
            }
        }
        Ok(FlowModel { config, layers })
    }

    /// Flow with no layers (the identity map).
    pub fn identity(input_dim: usize) -> FlowModel {
        FlowModel {
            config: FlowConfig {
                input_dim,
                n_couplings: 0,
                hidden: vec![],
                cond_dim: 0,
                use_norm: false,
                use_permute: false,
            },
            layers: vec![],
        }
    }

    pub fn from_layers(config: FlowConfig, layers: Vec<Layer>) -> FlowModel {
        FlowModel { config, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    /// Forward transform of a batch; returns `(z, logdet)` with logdet `n x 1`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        cond: Option<Var>,
    ) -> Result<(Var, Var)> {
        if x.cols != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "flow expects {} dims, got {}",
                self.config.input_dim, x.cols
            )));
        }
        let mut h = x;
        let mut logdet = g.constant(Tensor::zeros(x.rows, 1));
        for layer in &self.layers {
            let (next, ld) = match layer {
                Layer::Coupling(c) => c.forward(g, store, h, cond)?,
                Layer::Norm(n) => n.forward(g, store, h)?,
                Layer::Permute(p) => {
                    let y = g.cols(h, p)?;
                    (y, g.constant(Tensor::zeros(h.rows, 1)))
                }
            };
            h = next;
            logdet = g.add(logdet, ld)?;
        }
        Ok((h, logdet))
    }

    /// Value-level inverse transform of a batch of latent codes.
    pub fn inverse(&self, store: &ParamStore, z: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        if z.cols() != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "flow expects {} dims, got {}",
                self.config.input_dim,
                z.cols()
            )));
        }
        let mut h = z.clone();
        for layer in self.layers.iter().rev() {
            h = match layer {
                Layer::Coupling(c) => c.inverse(store, &h, cond)?,
                Layer::Norm(n) => n.inverse(store, &h)?,
                Layer::Permute(p) => {
                    let mut inv = vec![0usize; p.len()];
                    for (to, &from) in p.iter().enumerate() {
                        inv[from] = to;
                    }
                    let mut out = Tensor::zeros(h.rows(), h.cols());
                    for i in 0..h.rows() {
                        for (jj, &j) in inv.iter().enumerate() {
                            out.set(i, jj, h.get(i, j));
                        }
                    }
                    out
                }
            };
        }
        Ok(h)
    }

    /// Data-dependent init of every norm layer. The batch is pushed through
    /// the preceding layers so each norm standardizes what it actually sees.
    pub fn init_norms(&mut self, store: &mut ParamStore, batch: &Tensor) -> Result<()> {
        let cond = if self.config.cond_dim > 0 {
            Some(Tensor::zeros(batch.rows(), self.config.cond_dim))
        } else {
            None
        };
        for li in 0..self.layers.len() {
            if matches!(self.layers[li], Layer::Norm(_)) {
                // forward through layers [0, li) at current parameter values
                let mut g = Graph::new();
                let mut h = g.constant(batch.clone());
                let cv = cond.as_ref().map(|c| g.constant(c.clone()));
                for layer in &self.layers[..li] {
                    h = match layer {
                        Layer::Coupling(c) => c.forward(&mut g, store, h, cv)?.0,
                        Layer::Norm(n) => n.forward(&mut g, store, h)?.0,
                        Layer::Permute(p) => g.cols(h, p)?,
                    };
                }
                let seen = g.value(h).clone();
                if let Layer::Norm(n) = &mut self.layers[li] {
                    n.init(store, &seen)?;
                }
            }
        }
        Ok(())
    }

    /// Marks every norm layer as initialized without touching parameters.
    /// Used when parameters are restored from a checkpoint, where the
    /// data-dependent init already happened before the save.
    pub fn set_norms_initialized(&mut self) {
        for layer in &mut self.layers {
            if let Layer::Norm(n) = layer {
                n.initialized = true;
            }
        }
    }

    /// Unconditional change-of-variables log-likelihood with a standard
    /// normal base, one value per row.
    pub fn log_likelihood(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (z, logdet) = self.forward(g, store, x, None)?;
        let base = standard_normal_logpdf(g, z)?;
        g.add(base, logdet)
    }
}

/// Row-wise standard normal log-density: `-(sum z^2)/2 - d/2 ln(2 pi)`.
pub fn standard_normal_logpdf(g: &mut Graph, z: Var) -> Result<Var> {
    let d = z.cols as f64;
    let sq = g.mul(z, z)?;
    let ss = g.sum_rows(sq)?;
    let half = g.mul_const(ss, -0.5)?;
    g.add_const(half, -0.5 * d * LN_2PI)
}
