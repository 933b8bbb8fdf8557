//! Minimal differentiable compute kernel.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{log_sum_exp, sigmoid, softmax, softplus, Gradients, Graph, Matrix, Var};
pub use layers::{layer_norm, linear, mlp, multi_head_attention, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use params::{ParamId, ParamStore};

/// Rows × C matrix of feature vectors.
pub type TokenMatrix = Matrix;
