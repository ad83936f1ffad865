//! Probabilistic solar-generation forecasting with variational Bayesian
//! recurrent networks.
//!
//! Half-hourly generation windows are optionally compressed by a variational
//! autoencoder and fed to a recurrent feature block (BiLSTM, LSTM, simple RNN
//! or dense) topped by a mean-field Gaussian output layer. Monte-Carlo draws
//! from the weight posterior and the predictive Gaussian give prediction
//! intervals, scored with pinball, Winkler, Brier, RMSE, MAE and R.
//!
//! Everything runs on a small reverse-mode tape over `f64` tensors
//! ([`tensor`]).
// NaN-rejecting `!(x > 0.0)` checks are deliberate; tape ops return Result, so
// they cannot be the std operator traits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod data;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod params;
pub mod pipeline;
pub mod serialize;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
