//! Training loop: maximum-likelihood and contrastive objectives, early
//! stopping with best-parameter restore, and checkpoint persistence.

mod adam;
mod checkpoint;

pub use adam::{Adam, Optimizer};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, verify_table_digest, CheckpointMeta, FORMAT_VERSION,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{BatchCond, Estimator, Variant};
use crate::neighbors::{Neighborhood, NeighborhoodTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    Adam,
    Sgd,
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_opt() -> OptKind {
    OptKind::Adam
}
fn default_margin() -> f64 {
    0.5
}
fn default_patience() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_opt")]
    pub optimizer: OptKind,
    #[serde(default)]
    pub contrastive: bool,
    /// Hinge margin in bits per dimension; converted to nats internally.
    #[serde(default = "default_margin")]
    pub margin_bpd: f64,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: default_opt(),
            contrastive: false,
            margin_bpd: default_margin(),
            early_stop_patience: default_patience(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.margin_bpd < 0.0 {
            return Err(Error::Domain(format!(
                "margin_bpd must be >= 0, got {}",
                self.margin_bpd
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn margin_nats(&self, d: usize) -> f64 {
        self.margin_bpd * d as f64 * std::f64::consts::LN_2
    }

    pub fn make_optimizer(&self, n_params: usize) -> Optimizer {
        match self.optimizer {
            OptKind::Adam => Optimizer::Adam(Adam::new(self.learning_rate, n_params)),
            OptKind::Sgd => Optimizer::Sgd { lr: self.learning_rate },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_nll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hinge_satisfaction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_nll: f64,
}

enum CondOwned<'a> {
    None,
    Nbs(Vec<&'a Neighborhood>),
    Classes(Vec<u32>),
}

impl<'a> CondOwned<'a> {
    fn as_batch(&'a self) -> BatchCond<'a> {
        match self {
            CondOwned::None => BatchCond::None,
            CondOwned::Nbs(v) => BatchCond::Neighborhoods(v),
            CondOwned::Classes(c) => BatchCond::Classes(c),
        }
    }
}

/// Table entry conditioning a given training point. Per-point tables map
/// index i to entry i; prototype tables fall back to the entry with the
/// nearest centroid.
pub fn entry_for_point(table: &NeighborhoodTable, data: &Dataset, index: usize) -> usize {
    if table.len() == data.n() {
        return index;
    }
    let x = data.point(index);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (e, nb) in table.entries().iter().enumerate() {
        let c = nb.centroid();
        let d: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best_d {
            best_d = d;
            best = e;
        }
    }
    best
}

fn batch_cond<'a>(
    est: &Estimator,
    data: &Dataset,
    table: Option<&'a NeighborhoodTable>,
    indices: &[usize],
) -> Result<CondOwned<'a>> {
    match est.variant() {
        Variant::Rnvp | Variant::Kde => Ok(CondOwned::None),
        Variant::Ncl | Variant::Nct => {
            let table = table.ok_or(Error::MissingTable)?;
            let mut nbs = Vec::with_capacity(indices.len());
            for &i in indices {
                nbs.push(table.get(entry_for_point(table, data, i))?);
            }
            Ok(CondOwned::Nbs(nbs))
        }
        Variant::Cc => {
            let labels = data.labels().ok_or(Error::MissingLabels)?;
            Ok(CondOwned::Classes(indices.iter().map(|&i| labels[i]).collect()))
        }
    }
}

/// Scans a batch point-by-point to name the index behind a non-finite loss.
fn locate_nonfinite(
    est: &Estimator,
    data: &Dataset,
    table: Option<&NeighborhoodTable>,
    indices: &[usize],
) -> usize {
    for &i in indices {
        let finite = (|| -> Result<bool> {
            let cond = batch_cond(est, data, table, &[i])?;
            let mut g = Graph::new();
            let x = g.constant(data.gather(&[i]));
            let ll = est.batch_log_likelihood(&mut g, x, &cond.as_batch())?;
            Ok(g.value(ll).item()?.is_finite())
        })()
        .unwrap_or(false);
        if !finite {
            return i;
        }
    }
    indices.first().copied().unwrap_or(0)
}

/// One maximum-likelihood update: loss = -mean log p(x_i | cond_i). Returns
/// the pre-update loss.
pub fn mle_step(
    est: &mut Estimator,
    data: &Dataset,
    indices: &[usize],
    table: Option<&NeighborhoodTable>,
    opt: &mut Optimizer,
) -> Result<f64> {
    let built = (|| -> Result<(f64, Vec<f64>)> {
        let cond = batch_cond(est, data, table, indices)?;
        let mut g = Graph::new();
        let x = g.constant(data.gather(indices));
        let ll = est.batch_log_likelihood(&mut g, x, &cond.as_batch())?;
        let neg = g.neg(ll)?;
        let loss = g.mean(neg)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item()?, g.param_grads(&grads, est.store.len())))
    })();
    let (loss, grads) = match built {
        Ok(v) => v,
        Err(Error::NonFinite(_)) => {
            return Err(Error::NonFiniteLoss(locate_nonfinite(est, data, table, indices)))
        }
        Err(e) => return Err(e),
    };
    opt.step(est.store.values_mut(), &grads);
    Ok(loss)
}

/// One contrastive update: loss = mean[-l(x|N) + max(0, m + l(x'|N) - l(x|N))]
/// with positives `pos`, negatives `neg` (same length), both scored against
/// the positives' neighborhoods. Returns the pre-update loss.
pub fn contrastive_step(
    est: &mut Estimator,
    data: &Dataset,
    pos: &[usize],
    neg: &[usize],
    table: Option<&NeighborhoodTable>,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
) -> Result<f64> {
    if pos.len() != neg.len() {
        return Err(Error::SizeMismatch(format!(
            "{} positives vs {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    let margin = cfg.margin_nats(data.dim());
    let built = (|| -> Result<(f64, Vec<f64>)> {
        let cond = batch_cond(est, data, table, pos)?;
        let mut g = Graph::new();
        let xp = g.constant(data.gather(pos));
        let xn = g.constant(data.gather(neg));
        let lp = est.batch_log_likelihood(&mut g, xp, &cond.as_batch())?;
        let ln = est.batch_log_likelihood(&mut g, xn, &cond.as_batch())?;
        let gap = g.sub(ln, lp)?;
        let shifted = g.add_const(gap, margin)?;
        let hinge = g.relu(shifted)?;
        let neg_lp = g.neg(lp)?;
        let per_point = g.add(neg_lp, hinge)?;
        let loss = g.mean(per_point)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item()?, g.param_grads(&grads, est.store.len())))
    })();
    let (loss, grads) = match built {
        Ok(v) => v,
        Err(Error::NonFinite(_)) => {
            return Err(Error::NonFiniteLoss(locate_nonfinite(est, data, table, pos)))
        }
        Err(e) => return Err(e),
    };
    opt.step(est.store.values_mut(), &grads);
    Ok(loss)
}

/// Mean negative log-likelihood over the given points (no updates).
pub fn mean_nll(
    est: &Estimator,
    data: &Dataset,
    indices: &[usize],
    table: Option<&NeighborhoodTable>,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(256) {
        let cond = batch_cond(est, data, table, chunk)?;
        let mut g = Graph::new();
        let x = g.constant(data.gather(chunk));
        let ll = est.batch_log_likelihood(&mut g, x, &cond.as_batch())?;
        total -= (0..chunk.len()).map(|i| g.value(ll).get(i, 0)).sum::<f64>();
    }
    Ok(total / indices.len() as f64)
}

fn draw_negative(rng: &mut impl Rng, pool: &[usize], not: usize) -> usize {
    if pool.len() < 2 {
        return pool[0];
    }
    loop {
        let j = pool[rng.gen_range(0..pool.len())];
        if j != not {
            return j;
        }
    }
}

/// Full training run with shuffling, early stopping, and best-parameter
/// restore. Stops once `patience` epochs pass without a validation
/// improvement (patience 0 trains exactly one epoch).
pub fn fit(
    est: &mut Estimator,
    data: &Dataset,
    train_idx: &[usize],
    valid_idx: &[usize],
    table: Option<&NeighborhoodTable>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_idx.is_empty() || valid_idx.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_batch: Vec<usize> = train_idx.iter().take(256).copied().collect();
    match est.init_norms(&data.gather(&init_batch)) {
        Err(Error::AlreadyInitialized) | Ok(()) => {}
        Err(e) => return Err(e),
    }
    let mut opt = cfg.make_optimizer(est.store.len());
    let margin = cfg.margin_nats(data.dim());

    let mut order = train_idx.to_vec();
    let mut records = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_valid_nll = f64::INFINITY;
    let mut best_params = est.store.values().to_vec();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let loss = if cfg.contrastive {
                let negs: Vec<usize> =
                    chunk.iter().map(|&i| draw_negative(&mut rng, train_idx, i)).collect();
                contrastive_step(est, data, chunk, &negs, table, cfg, &mut opt)?
            } else {
                mle_step(est, data, chunk, table, &mut opt)?
            };
            loss_sum += loss;
            n_batches += 1;
        }
        let valid_nll = mean_nll(est, data, valid_idx, table)?;
        let hinge_satisfaction = if cfg.contrastive {
            let mut satisfied = 0usize;
            for &i in valid_idx {
                let j = draw_negative(&mut rng, train_idx, i);
                let cond = batch_cond(est, data, table, &[i])?;
                let mut g = Graph::new();
                let xp = g.constant(data.gather(&[i]));
                let xn = g.constant(data.gather(&[j]));
                let lp = est.batch_log_likelihood(&mut g, xp, &cond.as_batch())?;
                let ln = est.batch_log_likelihood(&mut g, xn, &cond.as_batch())?;
                if g.value(lp).item()? - g.value(ln).item()? >= margin {
                    satisfied += 1;
                }
            }
            Some(satisfied as f64 / valid_idx.len() as f64)
        } else {
            None
        };
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            valid_nll,
            hinge_satisfaction,
        });
        if valid_nll < best_valid_nll {
            best_valid_nll = valid_nll;
            best_epoch = epoch;
            best_params = est.store.values().to_vec();
        }
        if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    est.store.set_values(best_params);
    Ok(History { records, best_epoch, best_valid_nll })
}
