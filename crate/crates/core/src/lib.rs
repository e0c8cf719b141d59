//! Parallel-decoding generation over discrete token sequences, together with
//! a joint optimizer for the decoding schedule and the training-time mask
//! ratio distribution.
//!
//! The crate is organized bottom-up:
//!
//! - [`strategy`]: generation schedules, mask-ratio distributions, baselines
//! - [`toyworld`]: class-conditional Markov chain ground truth and exact inference
//! - [`predictor`]: predictor contract, exact oracle, and a trainable windowed MLP
//! - [`sampler`]: the T-step decode loop with guidance and Gumbel-Top-k re-masking
//! - [`metrics`]: exact total variation and token-statistic Fréchet distance
//! - [`optimizer`]: finite-difference schedule descent, line search, alternation
//! - [`experiments`]: the toy harness and the reproduction suites
//! - [`config`], [`manifest`]: run configuration and artifact bookkeeping

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod metrics;
pub mod optimizer;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod strategy;
pub mod toyworld;

pub use error::{Error, Result};
