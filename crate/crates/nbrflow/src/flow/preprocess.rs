use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logit-space preprocessing for quantized (image-like) data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessConfig {
    /// Boundary constant in (0, 0.5).
    pub alpha: f64,
    pub dequantize: bool,
    /// Pixel levels (e.g. 256); sets the dequantization noise width 1/levels.
    pub levels: u32,
}

impl PreprocessConfig {
    pub fn new(alpha: f64, dequantize: bool, levels: u32) -> Result<PreprocessConfig> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::Domain(format!("alpha {alpha} outside (0, 0.5)")));
        }
        Ok(PreprocessConfig { alpha, dequantize, levels })
    }
}

/// Maps `[0,1]` data to logit space: `y = logit(alpha + (1-2 alpha) x')`,
/// with uniform dequantization noise added when configured. Returns the
/// transformed vector and the log-Jacobian of the map.
pub fn logit_preprocess(
    x: &[f64],
    cfg: &PreprocessConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, f64)> {
    let mut y = Vec::with_capacity(x.len());
    let mut logdet = 0.0;
    let squeeze = 1.0 - 2.0 * cfg.alpha;
    for &v in x {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("value {v} outside [0,1]")));
        }
        let v = if cfg.dequantize {
            v + rng.gen::<f64>() / cfg.levels as f64
        } else {
            v
        };
        let p = cfg.alpha + squeeze * v;
        y.push((p / (1.0 - p)).ln());
        logdet += squeeze.ln() - p.ln() - (1.0 - p).ln();
    }
    Ok((y, logdet))
}

/// Inverse of the logit map; recovers the (dequantized) input.
pub fn logit_inverse(y: &[f64], cfg: &PreprocessConfig) -> Vec<f64> {
    let squeeze = 1.0 - 2.0 * cfg.alpha;
    y.iter()
        .map(|&v| {
            let p = 1.0 / (1.0 + (-v).exp());
            (p - cfg.alpha) / squeeze
        })
        .collect()
}
