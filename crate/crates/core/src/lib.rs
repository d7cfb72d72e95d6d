//! Continual-learning laboratory.
//!
//! Builds sequential task streams from MNIST-family corpora, trains
//! classifiers and generative models under pluggable anti-forgetting
//! strategies (regularization, rehearsal, marginal and conditional generative
//! replay), and evaluates runs with an accuracy-matrix metric suite plus
//! generative-quality metrics (FID, IS, fitting capacity).

pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod runner;
pub mod scenarios;
pub mod strategies;

pub use error::{Error, Result};
