//! Density-estimator facade over the KDE baseline, the unconditional flow,
//! the two neighbor-conditioned variants, and the class-conditioned
//! baseline.

mod kde;

pub use kde::{kde_log_density, kde_sample, log_mean_exp, log_sum_exp, scott_bandwidth, KdeConfig};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::conditioning::{
    gaussian_diag_logpdf, encode_neighbors, ncl_log_likelihood, nct_condition_matrix,
    nct_log_likelihood, NclHead, NclHeadConfig, SIGMA_FLOOR,
};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowModel, Mlp, MlpConfig};
use crate::neighbors::{sample_neighborhood, Neighborhood, NeighborhoodTable};

pub const DEFAULT_MARGINAL_M: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Kde,
    Rnvp,
    Ncl,
    Nct,
    Cc,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Kde => "kde",
            Variant::Rnvp => "rnvp",
            Variant::Ncl => "ncl",
            Variant::Nct => "nct",
            Variant::Cc => "cc",
        };
        f.write_str(s)
    }
}

fn default_couplings() -> usize {
    6
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_width() -> usize {
    64
}
fn default_true() -> bool {
    true
}

/// Architecture descriptor; together with the flat parameter vector it fully
/// determines the estimator (checkpoints persist exactly these two things).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub variant: Variant,
    pub input_dim: usize,
    #[serde(default = "default_couplings")]
    pub n_couplings: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Neighborhood size (ncl/nct only).
    #[serde(default)]
    pub k: usize,
    #[serde(default = "default_width")]
    pub trunk_width: usize,
    #[serde(default = "default_width")]
    pub branch_width: usize,
    /// Number of classes (cc only).
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default = "default_true")]
    pub use_norm: bool,
    #[serde(default = "default_true")]
    pub use_permute: bool,
}

impl EstimatorConfig {
    pub fn rnvp(input_dim: usize) -> EstimatorConfig {
        EstimatorConfig {
            variant: Variant::Rnvp,
            input_dim,
            n_couplings: default_couplings(),
            hidden: default_hidden(),
            k: 0,
            trunk_width: default_width(),
            branch_width: default_width(),
            n_classes: 0,
            use_norm: true,
            use_permute: true,
        }
    }

    pub fn ncl(input_dim: usize, k: usize) -> EstimatorConfig {
        EstimatorConfig { variant: Variant::Ncl, k, ..EstimatorConfig::rnvp(input_dim) }
    }

    pub fn nct(input_dim: usize, k: usize) -> EstimatorConfig {
        EstimatorConfig { variant: Variant::Nct, k, ..EstimatorConfig::rnvp(input_dim) }
    }

    pub fn cc(input_dim: usize, n_classes: usize) -> EstimatorConfig {
        EstimatorConfig { variant: Variant::Cc, n_classes, ..EstimatorConfig::rnvp(input_dim) }
    }
}

/// Class-conditioned Gaussian head: a single dense layer from the one-hot
/// class to the latent mean and (softplus) scale.
pub struct CcHead {
    n_classes: usize,
    mu: Mlp,
    sigma: Mlp,
}

impl CcHead {
    pub fn new(n_classes: usize, d: usize, store: &mut ParamStore, rng: &mut impl Rng) -> CcHead {
        let cfg = MlpConfig { in_dim: n_classes, hidden: vec![], out_dim: d, zero_init_last: true };
        let mu = Mlp::alloc(cfg.clone(), store, rng);
        let sigma = Mlp::alloc(cfg, store, rng);
        CcHead { n_classes, mu, sigma }
    }

    pub fn params(&self, g: &mut Graph, store: &ParamStore, onehot: Var) -> Result<(Var, Var)> {
        let mu = self.mu.forward(g, store, onehot)?;
        let raw = self.sigma.forward(g, store, onehot)?;
        let sp = g.softplus(raw)?;
        let sigma = g.add_const(sp, SIGMA_FLOOR)?;
        Ok((mu, sigma))
    }

    fn onehot(&self, classes: &[u32]) -> Result<Tensor> {
        let mut t = Tensor::zeros(classes.len(), self.n_classes);
        for (i, &c) in classes.iter().enumerate() {
            if c as usize >= self.n_classes {
                return Err(Error::Domain(format!(
                    "class {c} out of range (model has {} classes)",
                    self.n_classes
                )));
            }
            t.set(i, c as usize, 1.0);
        }
        Ok(t)
    }
}

enum ModelKind {
    Kde(KdeConfig),
    Rnvp(FlowModel),
    Ncl { flow: FlowModel, head: NclHead },
    Nct(FlowModel),
    Cc { flow: FlowModel, head: CcHead },
}

/// Batch conditioning information for likelihood evaluation.
pub enum BatchCond<'a> {
    None,
    Neighborhoods(&'a [&'a Neighborhood]),
    Classes(&'a [u32]),
}

pub struct Estimator {
    pub config: EstimatorConfig,
    pub store: ParamStore,
    kind: ModelKind,
    table: Option<NeighborhoodTable>,
}

impl Estimator {
    /// Parametric estimator (rnvp / ncl / nct / cc) with freshly initialized
    /// weights. Parameter layout is a pure function of the config, so a
    /// checkpoint payload can be poured back into a rebuilt estimator.
    pub fn build(config: EstimatorConfig, rng: &mut impl Rng) -> Result<Estimator> {
        let mut store = ParamStore::new();
        let d = config.input_dim;
        let kind = match config.variant {
            Variant::Kde => {
                return Err(Error::VariantMismatch(
                    "kde has no parameters; use Estimator::kde".into(),
                ))
            }
            Variant::Rnvp => ModelKind::Rnvp(FlowModel::new(
                flow_config(&config, 0),
                &mut store,
                rng,
            )?),
            Variant::Ncl => {
                if config.k == 0 {
                    return Err(Error::Domain("ncl requires k >= 1".into()));
                }
                let flow = FlowModel::new(flow_config(&config, 0), &mut store, rng)?;
                let head = NclHead::new(
                    NclHeadConfig::new(config.k, d, config.trunk_width, config.branch_width),
                    &mut store,
                    rng,
                );
                ModelKind::Ncl { flow, head }
            }
            Variant::Nct => {
                if config.k == 0 {
                    return Err(Error::Domain("nct requires k >= 1".into()));
                }
                ModelKind::Nct(FlowModel::new(
                    flow_config(&config, config.k * d),
                    &mut store,
                    rng,
                )?)
            }
            Variant::Cc => {
                if config.n_classes == 0 {
                    return Err(Error::Domain("cc requires n_classes >= 1".into()));
                }
                let flow = FlowModel::new(flow_config(&config, 0), &mut store, rng)?;
                let head = CcHead::new(config.n_classes, d, &mut store, rng);
                ModelKind::Cc { flow, head }
            }
        };
        Ok(Estimator { config, store, kind, table: None })
    }

    pub fn kde(data: Tensor, bandwidth: Option<f64>) -> Result<Estimator> {
        let d = data.cols();
        let cfg = match bandwidth {
            Some(b) => KdeConfig::new(data, b)?,
            None => KdeConfig::with_scott_bandwidth(data)?,
        };
        Ok(Estimator {
            config: EstimatorConfig {
                variant: Variant::Kde,
                input_dim: d,
                n_couplings: 0,
                hidden: vec![],
                k: 0,
                trunk_width: 0,
                branch_width: 0,
                n_classes: 0,
                use_norm: false,
                use_permute: false,
            },
            store: ParamStore::new(),
            kind: ModelKind::Kde(cfg),
            table: None,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn set_table(&mut self, table: NeighborhoodTable) {
        self.table = Some(table);
    }

    pub fn table(&self) -> Option<&NeighborhoodTable> {
        self.table.as_ref()
    }

    pub fn require_table(&self) -> Result<&NeighborhoodTable> {
        self.table.as_ref().ok_or(Error::MissingTable)
    }

    /// Data-dependent initialization of the flow's norm layers.
    pub fn init_norms(&mut self, batch: &Tensor) -> Result<()> {
        let store = &mut self.store;
        match &mut self.kind {
            ModelKind::Kde(_) => Ok(()),
            ModelKind::Rnvp(f) | ModelKind::Nct(f) => f.init_norms(store, batch),
            ModelKind::Ncl { flow, .. } | ModelKind::Cc { flow, .. } => {
                flow.init_norms(store, batch)
            }
        }
    }

    /// Marks norm layers initialized without recomputing statistics
    /// (checkpoint restore path).
    pub fn set_norms_initialized(&mut self) {
        match &mut self.kind {
            ModelKind::Kde(_) => {}
            ModelKind::Rnvp(f) | ModelKind::Nct(f) => f.set_norms_initialized(),
            ModelKind::Ncl { flow, .. } | ModelKind::Cc { flow, .. } => {
                flow.set_norms_initialized()
            }
        }
    }

    /// Per-row log-likelihood of a batch as a differentiable graph node.
    /// The conditioning argument must match the variant.
    pub fn batch_log_likelihood(
        &self,
        g: &mut Graph,
        x: Var,
        cond: &BatchCond,
    ) -> Result<Var> {
        match (&self.kind, cond) {
            (ModelKind::Rnvp(f), BatchCond::None) => f.log_likelihood(g, &self.store, x),
            (ModelKind::Ncl { flow, head }, BatchCond::Neighborhoods(nbs)) => {
                check_batch(x.rows, nbs.len())?;
                ncl_log_likelihood(flow, head, &self.store, g, x, nbs)
            }
            (ModelKind::Nct(f), BatchCond::Neighborhoods(nbs)) => {
                check_batch(x.rows, nbs.len())?;
                nct_log_likelihood(f, &self.store, g, x, nbs)
            }
            (ModelKind::Cc { flow, head }, BatchCond::Classes(classes)) => {
                check_batch(x.rows, classes.len())?;
                let onehot = g.constant(head.onehot(classes)?);
                let (z, logdet) = flow.forward(g, &self.store, x, None)?;
                let (mu, sigma) = head.params(g, &self.store, onehot)?;
                let base = gaussian_diag_logpdf(g, z, mu, sigma)?;
                g.add(base, logdet)
            }
            _ => Err(Error::VariantMismatch(format!(
                "conditioning does not match estimator variant {}",
                self.config.variant
            ))),
        }
    }

    /// Conditional log-likelihood of a single point (ncl/nct only).
    pub fn conditional_log_likelihood(&self, x: &[f64], nb: &Neighborhood) -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::row(x.to_vec()));
        let ll = self.batch_log_likelihood(&mut g, xv, &BatchCond::Neighborhoods(&[nb]))?;
        g.value(ll).item()
    }

    /// Class-conditioned log-likelihood of a single point (cc only).
    pub fn class_log_likelihood(&self, x: &[f64], class: u32) -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::row(x.to_vec()));
        let ll = self.batch_log_likelihood(&mut g, xv, &BatchCond::Classes(&[class]))?;
        g.value(ll).item()
    }

    /// Unconditional log-density (kde and rnvp).
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        match &self.kind {
            ModelKind::Kde(cfg) => kde_log_density(cfg, x),
            ModelKind::Rnvp(_) => {
                let mut g = Graph::new();
                let xv = g.constant(Tensor::row(x.to_vec()));
                let ll = self.batch_log_likelihood(&mut g, xv, &BatchCond::None)?;
                g.value(ll).item()
            }
            _ => Err(Error::VariantMismatch(format!(
                "{} has no unconditional density; use marginal_log_likelihood",
                self.config.variant
            ))),
        }
    }

    /// Marginal log-likelihood: log-mean-exp of conditional log-likelihoods
    /// over `m` neighborhoods drawn uniformly from the bound table. When `m`
    /// equals the table size the sum runs over every entry exactly once
    /// (exact marginalization).
    pub fn marginal_log_likelihood(
        &self,
        x: &[f64],
        m: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if m == 0 {
            return Err(Error::Domain("marginal sample count must be >= 1".into()));
        }
        let table = self.require_table()?;
        let mut lls = Vec::with_capacity(m);
        if m == table.len() {
            for nb in table.entries() {
                lls.push(self.conditional_log_likelihood(x, nb)?);
            }
        } else {
            for _ in 0..m {
                let nb = sample_neighborhood(table, rng)?;
                lls.push(self.conditional_log_likelihood(x, nb)?);
            }
        }
        Ok(log_mean_exp(&lls))
    }

    /// One conditional draw (ncl/nct only): sample the variant's base
    /// distribution and run the inverse transform.
    pub fn conditional_sample(&self, nb: &Neighborhood, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let d = self.config.input_dim;
        match &self.kind {
            ModelKind::Ncl { flow, head } => {
                let mut g = Graph::new();
                let enc = encode_neighbors(flow, &self.store, &mut g, &[nb])?;
                let (mu, sigma) = head.params(&mut g, &self.store, enc)?;
                let (mu, sigma) = (g.value(mu).clone(), g.value(sigma).clone());
                let mut z = Tensor::zeros(1, d);
                for j in 0..d {
                    let eps: f64 = StandardNormal.sample(rng);
                    z.set(0, j, mu.get(0, j) + sigma.get(0, j) * eps);
                }
                let x = flow.inverse(&self.store, &z, None)?;
                Ok(x.row_slice(0).to_vec())
            }
            ModelKind::Nct(f) => {
                let mut z = Tensor::zeros(1, d);
                for j in 0..d {
                    z.set(0, j, StandardNormal.sample(rng));
                }
                let cond = nct_condition_matrix(&[nb])?;
                let x = f.inverse(&self.store, &z, Some(&cond))?;
                Ok(x.row_slice(0).to_vec())
            }
            _ => Err(Error::VariantMismatch(format!(
                "{} does not support neighborhood-conditional sampling",
                self.config.variant
            ))),
        }
    }

    /// One class-conditioned draw (cc only).
    pub fn class_sample(&self, class: u32, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match &self.kind {
            ModelKind::Cc { flow, head } => {
                let d = self.config.input_dim;
                let mut g = Graph::new();
                let onehot = g.constant(head.onehot(&[class])?);
                let (mu, sigma) = head.params(&mut g, &self.store, onehot)?;
                let (mu, sigma) = (g.value(mu).clone(), g.value(sigma).clone());
                let mut z = Tensor::zeros(1, d);
                for j in 0..d {
                    let eps: f64 = StandardNormal.sample(rng);
                    z.set(0, j, mu.get(0, j) + sigma.get(0, j) * eps);
                }
                let x = flow.inverse(&self.store, &z, None)?;
                Ok(x.row_slice(0).to_vec())
            }
            _ => Err(Error::VariantMismatch(format!(
                "{} does not support class-conditional sampling",
                self.config.variant
            ))),
        }
    }

    /// Unconditional draw. For the neighbor-conditioned variants this is the
    /// full generative process: sample a neighborhood uniformly, then sample
    /// conditionally.
    pub fn unconditional_sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match &self.kind {
            ModelKind::Kde(cfg) => Ok(kde_sample(cfg, rng)),
            ModelKind::Rnvp(f) => {
                let d = self.config.input_dim;
                let mut z = Tensor::zeros(1, d);
                for j in 0..d {
                    z.set(0, j, StandardNormal.sample(rng));
                }
                let x = f.inverse(&self.store, &z, None)?;
                Ok(x.row_slice(0).to_vec())
            }
            ModelKind::Ncl { .. } | ModelKind::Nct(_) => {
                let nb = {
                    let table = self.require_table()?;
                    sample_neighborhood(table, rng)?.clone()
                };
                self.conditional_sample(&nb, rng)
            }
            ModelKind::Cc { .. } => {
                let class = rng.gen_range(0..self.config.n_classes) as u32;
                self.class_sample(class, rng)
            }
        }
    }
}

fn flow_config(cfg: &EstimatorConfig, cond_dim: usize) -> FlowConfig {
    FlowConfig {
        input_dim: cfg.input_dim,
        n_couplings: cfg.n_couplings,
        hidden: cfg.hidden.clone(),
        cond_dim,
        use_norm: cfg.use_norm,
        use_permute: cfg.use_permute,
    }
}

fn check_batch(rows: usize, cond_len: usize) -> Result<()> {
    if rows != cond_len {
        return Err(Error::SizeMismatch(format!(
            "batch has {rows} rows but {cond_len} conditioning entries"
        )));
    }
    Ok(())
}
