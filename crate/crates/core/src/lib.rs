//! Information-theoretic analysis of self-supervised learning on small
//! piecewise-affine networks.
//!
//! * [`spline_net`]: leaky-ReLU MLPs, activation patterns and per-region affine maps.
//! * [`pushforward`]: Gaussian and mixture densities pushed through a network.
//! * [`infotheory`]: mixture entropy estimators and bounds, the Gaussian
//!   conditional decoder and mutual-information lower bounds.
//! * [`ssl_objectives`]: VICReg and InfoNCE losses with exact gradients.
//! * [`training`]: toy manifold datasets, two-view sampling and the training loop.
//! * [`normality`]: the D'Agostino–Pearson K² test and the input-noise sweep.
//! * [`cli`]: the experiment commands behind the `infomax-lab` binary.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod infotheory;
pub mod normality;
pub mod numerics;
pub mod pushforward;
pub mod report;
pub mod spline_net;
pub mod ssl_objectives;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{GaussianDensity, GaussianMixture, Matrix, RngStream, Vector};
pub use spline_net::{ActivationPattern, AffineMap, MlpNetwork};
