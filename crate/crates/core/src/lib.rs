//! Normalizing-flow-assisted Markov chain Monte Carlo.
//!
//! An ensemble of walkers alternates local Langevin moves with nonlocal
//! independence Metropolis–Hastings moves proposed by a RealNVP flow, while
//! the flow is trained on the walkers' own positions by maximum likelihood
//! (forward KL). The trained flow doubles as an importance sampler for the
//! evidence.
//!
//! Module map:
//! - [`nn`]: dense ReLU networks, reverse-mode gradients, Adam.
//! - [`flow`]: affine coupling layers and the RealNVP pushforward density.
//! - [`targets`]: the posterior interface and the built-in targets.
//! - [`samplers`]: walker ensemble, Langevin and flow-proposal kernels.
//! - [`trainer`]: the concurrent sample-and-train loop.
//! - [`estimators`]: importance weights, evidence, effective sample size.
//! - [`whitening`]: affine whitening and a Jacobi eigensolver.

pub mod error;
pub mod estimators;
pub mod flow;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod samplers;
pub mod targets;
pub mod trainer;
pub mod whitening;

pub use error::{Error, Result};
