//! Small dense networks with exact reverse-mode gradients, spectral
//! normalization and stochastic policy heads.

mod network;
mod optim;
mod policy;
mod spectral;

pub use network::{Activation, ForwardCache, GradientSet, Layer, Network};
pub use optim::{clip_grad_norm, Adam};
pub use policy::{
    entropy_grad, log_prob_grad, policy_mode, policy_sample, sigmoid, softplus, squashed_density_1d, GaussianPolicy,
    HeadKind, LogProbGrad, PolicyOutput, PolicySample, LOG_STD_MAX, LOG_STD_MIN,
};
pub use spectral::{spectral_normalize, PowerIteration, SIGMA_FLOOR};
