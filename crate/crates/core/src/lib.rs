//! Continuous-time reinforcement learning for dynamic mean–variance
//! portfolio selection.
//!
//! The crate bundles a Black–Scholes market simulator, an entropy-regularized
//! actor–critic learner in two flavours (episodic baseline and online with
//! counterfactual mini-batches), closed-form oracles for the known-market
//! case, classical allocation rules, performance metrics and a monthly
//! rebalancing backtest engine.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod actor_critic;
pub mod backtest;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod market;
pub mod metrics;
pub mod online;
pub mod oracles;
pub mod rng;
pub mod strategies;
pub mod train;

pub use error::{Error, Result};
