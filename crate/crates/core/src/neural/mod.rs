//! Minimal tensor and reverse-mode gradient engine with exactly the primitives
//! the generator, discriminator and MLP classifier need.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod selfcheck;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, relative_error, FD_STEP};
pub use graph::{kl_divergence_raw, log_sigmoid, sigmoid, softmax_in_place, Axis, Graph, Var, BN_EPS};
pub use layers::{
    attention_context, init_weight, linear, lstm_cell, lstm_from_gates, minibatch_discrimination, LstmWeights,
};
pub use params::{clip_global_norm, Bound, Gradients, ParamStore, CONTAINER_TAG};
pub(crate) use params::{check_tag, read_u64, take};
pub use selfcheck::{primitive_checks, PrimitiveCheck, KINKED_TOL, SMOOTH_TOL};
pub use tensor::{argmax, Tensor};

/// LeakyReLU negative slope used throughout.
pub const LEAKY_SLOPE: f64 = 0.2;
