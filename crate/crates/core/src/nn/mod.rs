//! Dense networks with hand-derived backpropagation and an Adam optimizer.
//!
//! All learning math is `f64`. Parameters pack into one flat vector, layer
//! by layer, weights (input-major) before biases.

mod adam;
mod dense;
pub mod finite_diff;
mod policy;

pub use adam::{adam_step, AdamConfig, OptimizerState, StepOutcome};
pub use dense::{Activation, DenseNet, Layer, Trace};
pub use policy::{
    gaussian_policy_sample, log_prob_of_action, log_prob_of_action_grad, PolicyError, PolicySample,
    SquashedGaussian, LOG_STD_MAX, LOG_STD_MIN,
};
