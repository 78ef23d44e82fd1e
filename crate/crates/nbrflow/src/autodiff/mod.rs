//! Minimal reverse-mode differentiation engine.
//!
//! Values are dense 2-D [`Tensor`]s recorded on a single-use [`Graph`] tape;
//! [`Graph::backward`] walks the tape once in reverse, accumulating gradients
//! additively over fan-out. Trainable parameters live in a flat
//! [`ParamStore`] so optimizers and checkpoints see one contiguous vector.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{finite_difference, grad_check, max_rel_err};
pub use graph::{sigmoid, softplus, Gradients, Graph, Var};
pub use params::{Init, ParamSlice, ParamStore};
pub use tensor::Tensor;
