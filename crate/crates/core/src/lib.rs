//! Network-assisted random forest plus (NeRF+).
//!
//! Regression for samples that are nodes of a network. A random forest is
//! grown on the covariates and a spectral embedding of the network; each
//! tree is then rewritten as a linear model on its decision-stump features
//! and refit with a generalized ridge penalty that adds network-cohesive
//! node effects. Because the final model is linear per tree it supports
//! prediction on unseen nodes, exact additive importances for features and
//! the network, and closed-form leave-one-out influence.
//!
//! Start with [`model::fit`] and [`model::NerfPlusModel::predict`]; the
//! `examples/` directory has one runnable program per capability.

pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod forest;
pub mod influence;
pub mod interpret;
pub mod linalg;
pub mod model;
pub mod ridge;
pub mod rng;
pub mod sim;

pub use data::{build_laplacian, Dataset, Laplacian, Network};
pub use error::{NerfError, Result};
pub use model::{fit, NerfPlusConfig, NerfPlusModel};
