//! Command-line workflow: `nbrflow <command> [--config FILE] [--key value]`.
//!
//! Every command resolves its configuration as CLI flag > config file >
//! default, writes a resolved-config JSON snapshot next to its outputs, and
//! honors the NBRFLOW_SEED environment variable when no seed is given.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate, read_idx_images, read_idx_labels, Dataset, DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, EstimatorConfig, Variant, DEFAULT_MARGINAL_M};
use crate::metrics::{
    bits_per_dimension, interpolate_neighborhoods, novelty_scores, roc_auc, roc_curve,
    MetricReport,
};
use crate::neighbors::{
    build_table, cluster_neighborhoods, fit_pca, NeighborhoodTable, DEFAULT_K,
    DEFAULT_PCA_VARIANCE,
};
use crate::svg::{panel_svg, scatter_svg, Series};
use crate::train::{
    entry_for_point, fit, load_checkpoint, save_checkpoint, verify_table_digest, CheckpointMeta,
    OptKind, TrainConfig,
};

#[derive(Parser)]
#[command(name = "nbrflow", about = "Neighbor-conditioned normalizing flows", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (or ingest IDX images) as CSV
    GenData(GenDataArgs),
    /// Build a neighborhood table from a dataset
    Neighbors(NeighborsArgs),
    /// Train a density estimator
    Train(TrainArgs),
    /// Draw samples from a trained model
    Sample(SampleArgs),
    /// Evaluate likelihoods on a test set
    Eval(EvalArgs),
    /// One-class novelty detection experiment
    Novelty(NoveltyArgs),
    /// Interpolate between two neighborhoods
    Interpolate(InterpolateArgs),
}

/// Process exit code for an error: 2 usage, 3 data, 4 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_)
        | Error::VariantMismatch(_)
        | Error::MissingTable
        | Error::MissingLabels
        | Error::MissingConditioning
        | Error::BadNeighborhoodId { .. }
        | Error::SizeMismatch(_)
        | Error::KTooLarge { .. }
        | Error::AlreadyInitialized
        | Error::NonScalarOutput(_)
        | Error::EmptySet => 2,
        Error::Io(_)
        | Error::Parse(_)
        | Error::Json(_)
        | Error::DigestMismatch { .. }
        | Error::CorruptPayload(_)
        | Error::VersionMismatch { .. }
        | Error::EmptyData
        | Error::EmptyTable
        | Error::InsufficientClassMembers { .. }
        | Error::DegenerateData(_)
        | Error::SingleClass
        | Error::ShapeMismatch(_) => 3,
        Error::NonFinite(_) | Error::NonFiniteLoss(_) | Error::DegenerateBatch(_) => 4,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Neighbors(a) => cmd_neighbors(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Novelty(a) => cmd_novelty(a),
        Command::Interpolate(a) => cmd_interpolate(a),
    }
}

fn merge<T>(field: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *field = v;
    }
}

fn load_file_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.or_else(|| std::env::var("NBRFLOW_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

/// Sibling path sharing `out`'s stem: `runs/model.ckpt` -> `runs/model.<suffix>`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

fn write_snapshot<T: Serialize>(out: &Path, resolved: &T) -> Result<String> {
    let json = serde_json::to_string_pretty(resolved)?;
    fs::write(sibling(out, "config.json"), &json)?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(format!("{:x}", hasher.finalize())[..16].to_string())
}

fn parse_hidden(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad hidden width {p:?}: {e}")))
        .collect()
}

// ---------------------------------------------------------------- gen-data

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<GenKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// IDX image file (kind = idx-images)
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (kind = idx-images, optional)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Average-pooling factor for IDX images
    #[arg(long)]
    downsample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum GenKind {
    Moons,
    Rings,
    GaussianGrid,
    Pinwheel,
    IdxImages,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct GenDataConfig {
    kind: GenKind,
    n: usize,
    noise: f64,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    downsample: usize,
    seed: Option<u64>,
    out: PathBuf,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            kind: GenKind::Moons,
            n: 2000,
            noise: 0.05,
            images: None,
            labels: None,
            downsample: 2,
            seed: None,
            out: PathBuf::from("data.csv"),
        }
    }
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: GenDataConfig = load_file_config(&a.config)?;
    merge(&mut cfg.kind, a.kind);
    merge(&mut cfg.n, a.n);
    merge(&mut cfg.noise, a.noise);
    merge(&mut cfg.images, a.images.map(Some));
    merge(&mut cfg.labels, a.labels.map(Some));
    merge(&mut cfg.downsample, a.downsample);
    merge(&mut cfg.seed, a.seed.map(Some));
    merge(&mut cfg.out, a.out);
    cfg.seed = Some(resolve_seed(cfg.seed));

    let dataset = match cfg.kind {
        GenKind::IdxImages => {
            let images = cfg
                .images
                .as_ref()
                .ok_or_else(|| Error::Domain("idx-images requires --images".into()))?;
            let points = read_idx_images(images, cfg.downsample)?;
            let labels = match &cfg.labels {
                Some(p) => Some(read_idx_labels(p)?),
                None => None,
            };
            Dataset::new(points, labels)?
        }
        kind => {
            let spec = DatasetSpec {
                kind: match kind {
                    GenKind::Moons => DatasetKind::Moons,
                    GenKind::Rings => DatasetKind::Rings,
                    GenKind::GaussianGrid => DatasetKind::GaussianGrid,
                    GenKind::Pinwheel => DatasetKind::Pinwheel,
                    GenKind::IdxImages => unreachable!(),
                },
                n: cfg.n,
                noise: cfg.noise,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap());
            generate(&spec, &mut rng)?
        }
    };
    dataset.save_csv(&cfg.out)?;
    write_snapshot(&cfg.out, &cfg)?;
    eprintln!("wrote {} points to {}", dataset.n(), cfg.out.display());
    Ok(())
}

// --------------------------------------------------------------- neighbors

#[derive(Args)]
pub struct NeighborsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    pca_var: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Cluster-prototype mode: number of clusters
    #[arg(long)]
    clusters: Option<usize>,
    /// Prototypes kept per cluster
    #[arg(long)]
    prototypes: Option<usize>,
    /// Restrict neighbors to same-class points
    #[arg(long)]
    class_restrict: bool,
    /// Keep the query point itself among its neighbors
    #[arg(long)]
    include_self: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct NeighborsConfig {
    data: PathBuf,
    pca_var: f64,
    k: usize,
    clusters: usize,
    prototypes: usize,
    class_restrict: bool,
    include_self: bool,
    seed: Option<u64>,
    out: PathBuf,
}

impl Default for NeighborsConfig {
    fn default() -> Self {
        NeighborsConfig {
            data: PathBuf::from("data.csv"),
            pca_var: DEFAULT_PCA_VARIANCE,
            k: DEFAULT_K,
            clusters: 0,
            prototypes: 0,
            class_restrict: false,
            include_self: false,
            seed: None,
            out: PathBuf::from("table.nbr"),
        }
    }
}

fn cmd_neighbors(a: NeighborsArgs) -> Result<()> {
    let mut cfg: NeighborsConfig = load_file_config(&a.config)?;
    merge(&mut cfg.data, a.data);
    merge(&mut cfg.pca_var, a.pca_var);
    merge(&mut cfg.k, a.k);
    merge(&mut cfg.clusters, a.clusters);
    merge(&mut cfg.prototypes, a.prototypes);
    if a.class_restrict {
        cfg.class_restrict = true;
    }
    if a.include_self {
        cfg.include_self = true;
    }
    merge(&mut cfg.seed, a.seed.map(Some));
    merge(&mut cfg.out, a.out);
    cfg.seed = Some(resolve_seed(cfg.seed));

    let data = Dataset::load_csv(&cfg.data)?;
    let proj = fit_pca(data.points(), cfg.pca_var)?;
    let table = if cfg.clusters > 0 {
        let prototypes = if cfg.prototypes > 0 { cfg.prototypes } else { cfg.k };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap());
        cluster_neighborhoods(&data, &proj, cfg.clusters, prototypes, &mut rng)?
    } else {
        let labels = if cfg.class_restrict {
            Some(data.labels().ok_or(Error::MissingLabels)?)
        } else {
            None
        };
        build_table(&data, &proj, cfg.k, labels, cfg.include_self)?
    };
    table.save(&cfg.out)?;
    write_snapshot(&cfg.out, &cfg)?;
    eprintln!(
        "wrote {} neighborhoods (k={}) to {}",
        table.len(),
        table.k(),
        cfg.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Variant>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    couplings: Option<usize>,
    /// Comma-separated hidden widths, e.g. 64,64
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptKind>,
    #[arg(long)]
    contrastive: bool,
    #[arg(long)]
    margin_bpd: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    valid_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct TrainCmdConfig {
    model: Variant,
    data: PathBuf,
    table: Option<PathBuf>,
    couplings: usize,
    hidden: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    optimizer: OptKind,
    contrastive: bool,
    margin_bpd: f64,
    patience: usize,
    valid_frac: f64,
    seed: Option<u64>,
    out: PathBuf,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainCmdConfig {
            model: Variant::Nct,
            data: PathBuf::from("data.csv"),
            table: None,
            couplings: 6,
            hidden: vec![64, 64],
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            contrastive: false,
            margin_bpd: t.margin_bpd,
            patience: t.early_stop_patience,
            valid_frac: 0.2,
            seed: None,
            out: PathBuf::from("model.ckpt"),
        }
    }
}

/// Deterministic train/valid index split.
fn split_indices(n: usize, valid_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_511e));
    let n_valid = ((n as f64 * valid_frac).round() as usize).clamp(1, n - 1);
    let valid = idx.split_off(n - n_valid);
    (idx, valid)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainCmdConfig = load_file_config(&a.config)?;
    merge(&mut cfg.model, a.model);
    merge(&mut cfg.data, a.data);
    merge(&mut cfg.table, a.table.map(Some));
    merge(&mut cfg.couplings, a.couplings);
    if let Some(h) = &a.hidden {
        cfg.hidden = parse_hidden(h).map_err(Error::Parse)?;
    }
    merge(&mut cfg.epochs, a.epochs);
    merge(&mut cfg.batch_size, a.batch_size);
    merge(&mut cfg.learning_rate, a.learning_rate);
    merge(&mut cfg.optimizer, a.optimizer);
    if a.contrastive {
        cfg.contrastive = true;
    }
    merge(&mut cfg.margin_bpd, a.margin_bpd);
    merge(&mut cfg.patience, a.patience);
    merge(&mut cfg.valid_frac, a.valid_frac);
    merge(&mut cfg.seed, a.seed.map(Some));
    merge(&mut cfg.out, a.out);
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);

    let data = Dataset::load_csv(&cfg.data)?;
    let needs_table = matches!(cfg.model, Variant::Ncl | Variant::Nct);
    let table = match (&cfg.table, needs_table) {
        (Some(p), true) => Some(NeighborhoodTable::load(p, &data)?),
        (Some(p), false) => {
            eprintln!(
                "warning: --model {} does not use a neighborhood table; ignoring {}",
                cfg.model,
                p.display()
            );
            None
        }
        (None, true) => return Err(Error::MissingTable),
        (None, false) => None,
    };

    let mut est_cfg = match cfg.model {
        Variant::Rnvp => EstimatorConfig::rnvp(data.dim()),
        Variant::Ncl => EstimatorConfig::ncl(data.dim(), table.as_ref().unwrap().k()),
        Variant::Nct => EstimatorConfig::nct(data.dim(), table.as_ref().unwrap().k()),
        Variant::Cc => {
            let labels = data.labels().ok_or(Error::MissingLabels)?;
            let n_classes = labels.iter().max().map(|&m| m as usize + 1).unwrap_or(0);
            EstimatorConfig::cc(data.dim(), n_classes)
        }
        Variant::Kde => {
            return Err(Error::VariantMismatch("kde needs no training; use eval".into()))
        }
    };
    est_cfg.n_couplings = cfg.couplings;
    est_cfg.hidden = cfg.hidden.clone();
    est_cfg.trunk_width = cfg.hidden.first().copied().unwrap_or(64);
    est_cfg.branch_width = est_cfg.trunk_width;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = Estimator::build(est_cfg, &mut rng)?;
    let (train_idx, valid_idx) = split_indices(data.n(), cfg.valid_frac, seed);
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        contrastive: cfg.contrastive,
        margin_bpd: cfg.margin_bpd,
        early_stop_patience: cfg.patience,
        seed,
    };
    let history = fit(&mut est, &data, &train_idx, &valid_idx, table.as_ref(), &train_cfg)?;
    let meta = CheckpointMeta {
        epoch: history.best_epoch,
        best_valid_nll: history.best_valid_nll,
        table_digest: table.as_ref().map(|t| t.digest()),
    };
    save_checkpoint(&est, None, &meta, &cfg.out)?;
    fs::write(sibling(&cfg.out, "history.json"), serde_json::to_string_pretty(&history)?)?;
    write_snapshot(&cfg.out, &cfg)?;
    eprintln!(
        "best valid NLL {:.4} nats at epoch {} ({} epochs run); checkpoint {}",
        history.best_valid_nll,
        history.best_epoch,
        history.records.len(),
        cfg.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ sample

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    neighborhood_id: Option<usize>,
    #[arg(long)]
    unconditional: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct SampleConfig {
    checkpoint: PathBuf,
    data: Option<PathBuf>,
    table: Option<PathBuf>,
    neighborhood_id: Option<usize>,
    unconditional: bool,
    n: usize,
    seed: Option<u64>,
    out: PathBuf,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            checkpoint: PathBuf::from("model.ckpt"),
            data: None,
            table: None,
            neighborhood_id: None,
            unconditional: false,
            n: 500,
            seed: None,
            out: PathBuf::from("samples.csv"),
        }
    }
}

fn write_samples_csv(path: &Path, d: usize, samples: &[Vec<f64>]) -> Result<()> {
    let mut text = (0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for s in samples {
        let row = s.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_model_and_table(
    checkpoint: &Path,
    data: &Option<PathBuf>,
    table: &Option<PathBuf>,
) -> Result<(Estimator, CheckpointMeta)> {
    let (mut est, _opt, meta) = load_checkpoint(checkpoint)?;
    if let Some(tp) = table {
        let data_path = data
            .as_ref()
            .ok_or_else(|| Error::Domain("--table requires --data for digest checking".into()))?;
        let dataset = Dataset::load_csv(data_path)?;
        let t = NeighborhoodTable::load(tp, &dataset)?;
        verify_table_digest(&meta, &t)?;
        est.set_table(t);
    }
    Ok((est, meta))
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let mut cfg: SampleConfig = load_file_config(&a.config)?;
    merge(&mut cfg.checkpoint, a.checkpoint);
    merge(&mut cfg.data, a.data.map(Some));
    merge(&mut cfg.table, a.table.map(Some));
    merge(&mut cfg.neighborhood_id, a.neighborhood_id.map(Some));
    if a.unconditional {
        cfg.unconditional = true;
    }
    merge(&mut cfg.n, a.n);
    merge(&mut cfg.seed, a.seed.map(Some));
    merge(&mut cfg.out, a.out);
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);

    let (est, _) = load_model_and_table(&cfg.checkpoint, &cfg.data, &cfg.table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = est.config.input_dim;
    let (samples, members): (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>) = if cfg.unconditional {
        let s: Result<Vec<_>> = (0..cfg.n).map(|_| est.unconditional_sample(&mut rng)).collect();
        (s?, None)
    } else {
        let id = cfg
            .neighborhood_id
            .ok_or_else(|| Error::Domain("need --neighborhood-id or --unconditional".into()))?;
        let nb = est.require_table()?.get(id)?.clone();
        let s: Result<Vec<_>> = (0..cfg.n).map(|_| est.conditional_sample(&nb, &mut rng)).collect();
        let members =
            (0..nb.k()).map(|m| nb.member_vectors().row_slice(m).to_vec()).collect();
        (s?, Some(members))
    };
    write_samples_csv(&cfg.out, d, &samples)?;
    if d == 2 {
        let mut series = vec![Series { points: &samples, color: "steelblue", radius: 2.5 }];
        if let Some(m) = &members {
            series.push(Series { points: m, color: "red", radius: 4.0 });
        }
        fs::write(sibling(&cfg.out, "svg"), scatter_svg(&series))?;
    }
    write_snapshot(&cfg.out, &cfg)?;
    eprintln!("wrote {} samples to {}", samples.len(), cfg.out.display());
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Test dataset (CSV)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset the table was built from (defaults to --data)
    #[arg(long)]
    table_data: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
    /// Marginal likelihood with M sampled neighborhoods instead of conditional
    #[arg(long)]
    marginal: Option<usize>,
    /// Dump per-point scores to this CSV path
    #[arg(long)]
    scores_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    checkpoint: PathBuf,
    data: PathBuf,
    table_data: Option<PathBuf>,
    table: Option<PathBuf>,
    marginal: Option<usize>,
    scores_out: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: PathBuf::from("model.ckpt"),
            data: PathBuf::from("test.csv"),
            table_data: None,
            table: None,
            marginal: None,
            scores_out: None,
            seed: None,
            out: PathBuf::from("metrics.json"),
        }
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut cfg: EvalConfig = load_file_config(&a.config)?;
    merge(&mut cfg.checkpoint, a.checkpoint);
    merge(&mut cfg.data, a.data);
    merge(&mut cfg.table_data, a.table_data.map(Some));
    merge(&mut cfg.table, a.table.map(Some));
    merge(&mut cfg.marginal, a.marginal.map(Some));
    merge(&mut cfg.scores_out, a.scores_out.map(Some));
    merge(&mut cfg.seed, a.seed.map(Some));
    merge(&mut cfg.out, a.out);
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);

    let test = Dataset::load_csv(&cfg.data)?;
    let table_data = cfg.table_data.clone().unwrap_or_else(|| cfg.data.clone());
    let (est, _) = load_model_and_table(&cfg.checkpoint, &Some(table_data), &cfg.table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let scores: Vec<f64> = match (est.variant(), cfg.marginal) {
        (Variant::Rnvp, _) => {
            (0..test.n()).map(|i| est.log_likelihood(test.point(i))).collect::<Result<_>>()?
        }
        (Variant::Cc, _) => {
            let labels = test.labels().ok_or(Error::MissingLabels)?;
            (0..test.n())
                .map(|i| est.class_log_likelihood(test.point(i), labels[i]))
                .collect::<Result<_>>()?
        }
        (Variant::Ncl | Variant::Nct, Some(m)) => {
            let m = if m == 0 { DEFAULT_MARGINAL_M } else { m };
            (0..test.n())
                .map(|i| est.marginal_log_likelihood(test.point(i), m, &mut rng))
                .collect::<Result<_>>()?
        }
        (Variant::Ncl | Variant::Nct, None) => {
            let table = est.require_table()?;
            (0..test.n())
                .map(|i| {
                    let nb = table.get(entry_for_point(table, &test, i))?;
                    est.conditional_log_likelihood(test.point(i), nb)
                })
                .collect::<Result<_>>()?
        }
        (Variant::Kde, _) => {
            return Err(Error::VariantMismatch("kde checkpoints do not exist".into()))
        }
    };
    let mean_ll = scores.iter().sum::<f64>() / scores.len() as f64;
    let digest = write_snapshot(&cfg.out, &cfg)?;
    let reports = [
        MetricReport::new("mean_nll_nats", -mean_ll, scores.len(), &digest, seed),
        MetricReport::new(
            "bits_per_dimension",
            bits_per_dimension(mean_ll, test.dim(), None),
            scores.len(),
            &digest,
            seed,
        ),
    ];
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    fs::write(&cfg.out, lines)?;
    if let Some(p) = &cfg.scores_out {
        let mut text = String::from("index,log_likelihood\n");
        for (i, s) in scores.iter().enumerate() {
            text.push_str(&format!("{i},{s:?}\n"));
        }
        fs::write(p, text)?;
    }
    eprintln!("mean NLL {:.4} nats over {} points", -mean_ll, scores.len());
    Ok(())
}

// ----------------------------------------------------------------- novelty

#[derive(Args)]
pub struct NoveltyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled dataset (CSV with label column)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Class the one-class model trains on
    #[arg(long)]
    train_class: Option<u32>,
    #[arg(long, value_enum)]
    model: Option<Variant>,
    #[arg(long)]
    contrastive: bool,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    pca_var: Option<f64>,
    #[arg(long)]
    couplings: Option<usize>,
    /// Comma-separated hidden widths, e.g. 32,32
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    margin_bpd: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct NoveltyConfig {
    data: PathBuf,
    train_class: u32,
    model: Variant,
    contrastive: bool,
    train_frac: f64,
    k: usize,
    pca_var: f64,
    couplings: usize,
    hidden: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    margin_bpd: f64,
    patience: usize,
    seed: Option<u64>,
    out: PathBuf,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        NoveltyConfig {
            data: PathBuf::from("data.csv"),
            train_class: 0,
            model: Variant::Ncl,
            contrastive: false,
            train_frac: 0.5,
            k: DEFAULT_K,
            pca_var: DEFAULT_PCA_VARIANCE,
            couplings: 6,
            hidden: vec![32, 32],
            epochs: 30,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            margin_bpd: t.margin_bpd,
            patience: t.early_stop_patience,
            seed: None,
            out: PathBuf::from("novelty.json"),
        }
    }
}

/// Full one-class pipeline, reusable from tests: split the target class,
/// build the neighbor index from its training half only, fit, then score
/// held-out positives and every other class.
fn run_novelty(cfg_data: &Dataset, cfg: &NoveltyConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    novelty_pipeline(
        cfg_data,
        cfg.train_class,
        cfg.model,
        cfg.contrastive,
        cfg.train_frac,
        cfg.k,
        cfg.pca_var,
        cfg.couplings,
        &cfg.hidden,
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.margin_bpd,
        cfg.patience,
        cfg.seed.unwrap_or(0),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn novelty_pipeline(
    data: &Dataset,
    train_class: u32,
    model: Variant,
    contrastive: bool,
    train_frac: f64,
    k: usize,
    pca_var: f64,
    couplings: usize,
    hidden: &[usize],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    margin_bpd: f64,
    patience: usize,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    let class_idx: Vec<usize> =
        (0..data.n()).filter(|&i| labels[i] == train_class).collect();
    if class_idx.is_empty() {
        return Err(Error::EmptyData);
    }
    if class_idx.len() == data.n() {
        return Err(Error::SingleClass);
    }
    use rand::seq::SliceRandom;
    let mut order = class_idx.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0ddba11));
    let n_train = ((order.len() as f64 * train_frac).round() as usize).clamp(2, order.len() - 1);
    let train_subset = order[..n_train].to_vec();
    let held_out_pos: Vec<usize> = order[n_train..].to_vec();

    let train = data.subset(&train_subset);
    let proj = fit_pca(train.points(), pca_var)?;
    let table = build_table(&train, &proj, k, None, false)?;

    let mut est_cfg = match model {
        Variant::Ncl => EstimatorConfig::ncl(data.dim(), k),
        Variant::Nct => EstimatorConfig::nct(data.dim(), k),
        other => {
            return Err(Error::VariantMismatch(format!(
                "novelty detection needs ncl or nct, got {other}"
            )))
        }
    };
    est_cfg.n_couplings = couplings;
    est_cfg.hidden = hidden.to_vec();
    est_cfg.trunk_width = hidden.first().copied().unwrap_or(32);
    est_cfg.branch_width = est_cfg.trunk_width;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = Estimator::build(est_cfg, &mut rng)?;
    let (fit_train, fit_valid) = split_indices(train.n(), 0.2, seed);
    let train_cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        optimizer: OptKind::Adam,
        contrastive,
        margin_bpd,
        early_stop_patience: patience,
        seed,
    };
    fit(&mut est, &train, &fit_train, &fit_valid, Some(&table), &train_cfg)?;

    // test split: held-out positives plus every point of the other classes
    let mut test_idx = held_out_pos;
    test_idx.extend((0..data.n()).filter(|&i| labels[i] != train_class));
    let test = data.subset(&test_idx);
    let test_labels: Vec<bool> = test_idx.iter().map(|&i| labels[i] == train_class).collect();
    let scores = novelty_scores(&est, &train, &test, &proj, k)?;
    let auc = roc_auc(&scores, &test_labels)?;
    let curve = roc_curve(&scores, &test_labels)?;
    Ok((auc, curve))
}

fn cmd_novelty(a: NoveltyArgs) -> Result<()> {
    let mut cfg: NoveltyConfig = load_file_config(&a.config)?;
    merge(&mut cfg.data, a.data);
    merge(&mut cfg.train_class, a.train_class);
    merge(&mut cfg.model, a.model);
    if a.contrastive {
        cfg.contrastive = true;
    }
    merge(&mut cfg.train_frac, a.train_frac);
    merge(&mut cfg.k, a.k);
    merge(&mut cfg.pca_var, a.pca_var);
    merge(&mut cfg.couplings, a.couplings);
    if let Some(h) = &a.hidden {
        cfg.hidden = parse_hidden(h).map_err(Error::Parse)?;
    }
    merge(&mut cfg.epochs, a.epochs);
    merge(&mut cfg.batch_size, a.batch_size);
    merge(&mut cfg.learning_rate, a.learning_rate);
    merge(&mut cfg.margin_bpd, a.margin_bpd);
    merge(&mut cfg.patience, a.patience);
    merge(&mut cfg.seed, a.seed.map(Some));
    merge(&mut cfg.out, a.out);
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);

    let data = Dataset::load_csv(&cfg.data)?;
    let (auc, curve) = run_novelty(&data, &cfg)?;
    let digest = write_snapshot(&cfg.out, &cfg)?;
    let report = MetricReport::new("auc_roc", auc, data.n(), &digest, seed);
    fs::write(&cfg.out, format!("{}\n", serde_json::to_string(&report)?))?;
    let mut roc = String::from("fpr,tpr\n");
    for (fpr, tpr) in &curve {
        roc.push_str(&format!("{fpr:?},{tpr:?}\n"));
    }
    fs::write(sibling(&cfg.out, "roc.csv"), roc)?;
    eprintln!("AUC-ROC {auc:.4}");
    Ok(())
}

// ------------------------------------------------------------- interpolate

#[derive(Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    id_a: Option<usize>,
    #[arg(long)]
    id_b: Option<usize>,
    #[arg(long)]
    samples_per_step: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct InterpolateConfig {
    checkpoint: PathBuf,
    data: PathBuf,
    table: PathBuf,
    id_a: usize,
    id_b: usize,
    samples_per_step: usize,
    seed: Option<u64>,
    out: PathBuf,
}

impl Default for InterpolateConfig {
    fn default() -> Self {
        InterpolateConfig {
            checkpoint: PathBuf::from("model.ckpt"),
            data: PathBuf::from("data.csv"),
            table: PathBuf::from("table.nbr"),
            id_a: 0,
            id_b: 1,
            samples_per_step: 20,
            seed: None,
            out: PathBuf::from("interpolation.csv"),
        }
    }
}

fn cmd_interpolate(a: InterpolateArgs) -> Result<()> {
    let mut cfg: InterpolateConfig = load_file_config(&a.config)?;
    merge(&mut cfg.checkpoint, a.checkpoint);
    merge(&mut cfg.data, a.data);
    merge(&mut cfg.table, a.table);
    merge(&mut cfg.id_a, a.id_a);
    merge(&mut cfg.id_b, a.id_b);
    merge(&mut cfg.samples_per_step, a.samples_per_step);
    merge(&mut cfg.seed, a.seed.map(Some));
    merge(&mut cfg.out, a.out);
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);

    let (est, _) = load_model_and_table(
        &cfg.checkpoint,
        &Some(cfg.data.clone()),
        &Some(cfg.table.clone()),
    )?;
    let table = est.require_table()?;
    let a_nb = table.get(cfg.id_a)?.clone();
    let b_nb = table.get(cfg.id_b)?.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = interpolate_neighborhoods(&est, &a_nb, &b_nb, cfg.samples_per_step, &mut rng)?;

    let d = est.config.input_dim;
    let mut text = String::from("step,");
    text.push_str(&(0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(","));
    text.push('\n');
    for (t, (_, samples)) in steps.iter().enumerate() {
        for s in samples {
            text.push_str(&format!("{t},"));
            text.push_str(&s.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
            text.push('\n');
        }
    }
    fs::write(&cfg.out, text)?;
    if d == 2 {
        let member_sets: Vec<Vec<Vec<f64>>> = steps
            .iter()
            .map(|(nb, _)| {
                (0..nb.k()).map(|m| nb.member_vectors().row_slice(m).to_vec()).collect()
            })
            .collect();
        let panels: Vec<Vec<Series>> = steps
            .iter()
            .zip(&member_sets)
            .map(|((_, samples), members)| {
                vec![
                    Series { points: samples, color: "steelblue", radius: 2.0 },
                    Series { points: members, color: "red", radius: 3.5 },
                ]
            })
            .collect();
        fs::write(sibling(&cfg.out, "svg"), panel_svg(&panels))?;
    }
    write_snapshot(&cfg.out, &cfg)?;
    eprintln!("wrote {} interpolation steps to {}", steps.len(), cfg.out.display());
    Ok(())
}
