//! Multi-product inventory management: a stochastic warehouse simulator with
//! shared-capacity overflow handling, classical replenishment baselines and
//! from-scratch PPO / independent-PPO controllers.

pub mod baselines;
pub mod catalog;
pub mod cli;
pub mod env;
pub mod error;
pub mod eval;
pub mod ippo;
pub mod net;
pub mod ppo;
pub mod rng;
pub mod stochastic;
pub mod trainer;

pub use error::{Error, Result};
