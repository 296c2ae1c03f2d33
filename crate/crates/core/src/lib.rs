//! Dynamic Bayesian influenza forecasting.
//!
//! An SIR infectious curve, a discrepancy common to all seasons and a
//! season-specific discrepancy combine on the logit scale into the latent
//! ILI proportion behind weekly wILI observations. The crate fits that model
//! by Metropolis-within-Gibbs, turns posterior draws into CDC-challenge
//! binned forecasts, scores them, and runs leave-one-season-out backtests.
//!
//! Pure arithmetic (SIR recursion, densities, log score) is generic over
//! [`Real`]; the sampling layers work in `f64`.

pub mod backtest;
pub mod config;
pub mod data;
pub mod density;
pub mod error;
pub mod model;
pub mod num;
pub mod optim;
pub mod forecast;
pub mod mcmc;
pub mod priors;
pub mod simulate;
pub mod scoring;
pub mod sir;

pub use error::{Error, Result};
pub use num::Real;

pub type SirParams = sir::SirParams<f64>;
pub type SirTrajectory = sir::SirTrajectory<f64>;
pub type SirState = sir::SirState<f64>;
pub type SirParams32 = sir::SirParams<f32>;
pub type SirTrajectory32 = sir::SirTrajectory<f32>;
