//! Minimal differentiable numerics: tensors, a reverse-mode tape, MLPs and Adam.

mod adam;
mod gradcheck;
mod graph;
mod mlp;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, sample_coords, GradCheck};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use mlp::{Linear, Mlp, MlpVars};
pub use tensor::Tensor;
