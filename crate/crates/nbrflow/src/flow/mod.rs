//! Invertible transformations, exact log-determinants, and the
//! change-of-variables likelihood.

mod coupling;
mod mlp;
mod model;
mod norm;
mod preprocess;

pub use coupling::{alternating_mask, CouplingLayer};
pub use mlp::{Mlp, MlpConfig};
pub use model::{standard_normal_logpdf, FlowConfig, FlowModel, Layer, LN_2PI};
pub use norm::InvertibleNorm;
pub use preprocess::{logit_inverse, logit_preprocess, PreprocessConfig};
