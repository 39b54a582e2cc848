//! Joint VAE-regression model with a conditional (mixture) prior.
//!
//! The encoder and regressor share a convolutional trunk and fork into
//! `q(z|x)` and `q(c|x)`. The decoder maps `z` back to a grid, and the
//! generator maps a property sample to the prior `p(z|c)`. The loss is
//! `w_reg * NLL(c | q(c|x)) + w_style * style(x, x_hat) + w_kl * KL(q(z|x) || p(z|c~))`.

mod config;
mod kl;
mod model;
mod train;

pub use config::{Architecture, ModelConfig, Preset};
pub use kl::{
    gaussian_kl, gaussian_kl_graph, gaussian_nll, gaussian_nll_graph, mixture_mixture_kl, posterior_prior_kl,
    posterior_prior_kl_graph, LatentGaussian, MixturePrior,
};
pub use model::{LossParts, Model, Normalization, PriorNodes};
pub use train::{split_indices, train, EpochLog, Split, TrainConfig, TrainOutcome};
