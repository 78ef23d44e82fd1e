//! Neighbor-injection mechanisms: NCL (neighborhood-conditioned latent
//! Gaussian) and NCT (neighborhood-conditioned coupling transformations).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{standard_normal_logpdf, FlowModel, Mlp, MlpConfig};
use crate::neighbors::Neighborhood;

pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NclHeadConfig {
    pub k: usize,
    pub d: usize,
    /// Width of the three shared trunk layers.
    pub trunk_width: usize,
    /// Hidden width of each branch.
    pub branch_width: usize,
}

impl NclHeadConfig {
    pub fn new(k: usize, d: usize, trunk_width: usize, branch_width: usize) -> NclHeadConfig {
        NclHeadConfig { k, d, trunk_width, branch_width }
    }
}

/// Maps a flattened block of flow-transformed neighbors to the mean and
/// per-dimension scale of the latent Gaussian. The mu and sigma branches
/// share a three-layer trunk; sigma passes through softplus with a floor so
/// it stays strictly positive.
pub struct NclHead {
    pub config: NclHeadConfig,
    trunk: Mlp,
    mu_branch: Mlp,
    sigma_branch: Mlp,
}

impl NclHead {
    pub fn new(config: NclHeadConfig, store: &mut ParamStore, rng: &mut impl Rng) -> NclHead {
        let h = config.trunk_width;
        let trunk = Mlp::alloc(
            MlpConfig {
                in_dim: config.k * config.d,
                hidden: vec![h, h],
                out_dim: h,
                zero_init_last: false,
            },
            store,
            rng,
        );
        let branch_cfg = MlpConfig {
            in_dim: h,
            hidden: vec![config.branch_width],
            out_dim: config.d,
            zero_init_last: true,
        };
        let mu_branch = Mlp::alloc(branch_cfg.clone(), store, rng);
        let sigma_branch = Mlp::alloc(branch_cfg, store, rng);
        NclHead { config, trunk, mu_branch, sigma_branch }
    }

    /// `(mu, sigma)` for a batch of encodings shaped `n x (k*d)`.
    pub fn params(&self, g: &mut Graph, store: &ParamStore, enc: Var) -> Result<(Var, Var)> {
        if enc.cols != self.config.k * self.config.d {
            return Err(Error::ShapeMismatch(format!(
                "NCL head expects {} inputs, got {}",
                self.config.k * self.config.d,
                enc.cols
            )));
        }
        let feat = self.trunk.forward(g, store, enc)?;
        let feat = g.tanh(feat)?;
        let mu = self.mu_branch.forward(g, store, feat)?;
        let raw = self.sigma_branch.forward(g, store, feat)?;
        let sp = g.softplus(raw)?;
        let sigma = g.add_const(sp, SIGMA_FLOOR)?;
        Ok((mu, sigma))
    }
}

/// Members of each neighborhood stacked into a constant `(n*k) x d` matrix,
/// in fixed member order.
pub fn stack_members(neighborhoods: &[&Neighborhood]) -> Result<Tensor> {
    let k = neighborhoods
        .first()
        .map(|n| n.k())
        .ok_or(Error::EmptyTable)?;
    let d = neighborhoods[0].dim();
    let mut out = Tensor::zeros(neighborhoods.len() * k, d);
    for (i, nb) in neighborhoods.iter().enumerate() {
        if nb.k() != k || nb.dim() != d {
            return Err(Error::SizeMismatch("neighborhood sizes differ in batch".into()));
        }
        for m in 0..k {
            for j in 0..d {
                out.set(i * k + m, j, nb.member_vectors().get(m, j));
            }
        }
    }
    Ok(out)
}

/// Passes every neighbor through the same flow `q` that transforms the data
/// (shared parameters) and flattens the codes to one `n x (k*d)` row per
/// neighborhood. Per-member logdets are discarded.
pub fn encode_neighbors(
    flow: &FlowModel,
    store: &ParamStore,
    g: &mut Graph,
    neighborhoods: &[&Neighborhood],
) -> Result<Var> {
    let k = neighborhoods[0].k();
    let stacked = stack_members(neighborhoods)?;
    let members = g.constant(stacked);
    let (codes, _logdet) = flow.forward(g, store, members, None)?;
    g.reshape(codes, neighborhoods.len(), k * flow.input_dim())
}

/// Raw flattened member vectors (length `k*d`), the concatenation input of
/// the conditioned couplings.
pub fn nct_condition_vector(neighborhood: &Neighborhood) -> Vec<f64> {
    neighborhood.flattened()
}

/// `n x (k*d)` condition matrix for a batch of neighborhoods.
pub fn nct_condition_matrix(neighborhoods: &[&Neighborhood]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = neighborhoods.iter().map(|n| n.flattened()).collect();
    Tensor::from_rows(&rows)
}

/// Diagonal-Gaussian log-density, one value per row (the direct latent
/// formulation).
pub fn gaussian_diag_logpdf(
    g: &mut Graph,
    z: Var,
    mu: Var,
    sigma: Var,
) -> Result<Var> {
    let d = z.cols as f64;
    let diff = g.sub(z, mu)?;
    let sq = g.mul(diff, diff)?;
    let var = g.mul(sigma, sigma)?;
    let maha = g.div(sq, var)?;
    let maha = g.sum_rows(maha)?;
    let logvar = g.log(var)?;
    let logvar_sum = g.sum_rows(logvar)?;
    let inner = g.add(maha, logvar_sum)?;
    let scaled = g.mul_const(inner, -0.5)?;
    g.add_const(scaled, -0.5 * d * crate::flow::LN_2PI)
}

/// NCL conditional log-likelihood of a batch, direct latent-Gaussian form:
/// `log N(q(x) | mu, diag(sigma^2)) + logdet`.
pub fn ncl_log_likelihood(
    flow: &FlowModel,
    head: &NclHead,
    store: &ParamStore,
    g: &mut Graph,
    x: Var,
    neighborhoods: &[&Neighborhood],
) -> Result<Var> {
    let (z, logdet) = flow.forward(g, store, x, None)?;
    let enc = encode_neighbors(flow, store, g, neighborhoods)?;
    let (mu, sigma) = head.params(g, store, enc)?;
    let base = gaussian_diag_logpdf(g, z, mu, sigma)?;
    g.add(base, logdet)
}

/// NCL likelihood in the shift/scale view: standardize the latent code by
/// the head's mean and scale, evaluate a unit Gaussian, and correct the
/// logdet by `-sum log sigma`. Agrees with [`ncl_log_likelihood`] to 1e-8.
pub fn ncl_log_likelihood_shift_scale(
    flow: &FlowModel,
    head: &NclHead,
    store: &ParamStore,
    g: &mut Graph,
    x: Var,
    neighborhoods: &[&Neighborhood],
) -> Result<Var> {
    let (z, logdet) = flow.forward(g, store, x, None)?;
    let enc = encode_neighbors(flow, store, g, neighborhoods)?;
    let (mu, sigma) = head.params(g, store, enc)?;
    let diff = g.sub(z, mu)?;
    let zn = g.div(diff, sigma)?;
    let base = standard_normal_logpdf(g, zn)?;
    let log_sigma = g.log(sigma)?;
    let log_sigma_sum = g.sum_rows(log_sigma)?;
    let corrected = g.sub(logdet, log_sigma_sum)?;
    g.add(base, corrected)
}

/// NCT conditional log-likelihood: every coupling consumes the flattened
/// neighborhood; the base is a standard normal.
pub fn nct_log_likelihood(
    flow: &FlowModel,
    store: &ParamStore,
    g: &mut Graph,
    x: Var,
    neighborhoods: &[&Neighborhood],
) -> Result<Var> {
    let cond = g.constant(nct_condition_matrix(neighborhoods)?);
    let (z, logdet) = flow.forward(g, store, x, Some(cond))?;
    let base = standard_normal_logpdf(g, z)?;
    g.add(base, logdet)
}
