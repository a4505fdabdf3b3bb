//! Metric and similarity learning laboratory.
//!
//! Structured deep ReLU metric networks `F_a(1 - 2 sum_i phi(h_i(x), h_i(x')))`,
//! the constructive gadgets they are assembled from, synthetic tasks with a
//! known conditional label law, pairwise hinge-loss ERM, and Monte Carlo
//! estimators of the generalization, Bayes and excess risks.

pub mod erm;
pub mod error;
pub mod fit;
pub mod gadgets;
pub mod loss;
pub mod mc;
pub mod relu_net;
pub mod risk;
pub mod structured;
pub mod synthetic;

pub use error::{Error, Result};
