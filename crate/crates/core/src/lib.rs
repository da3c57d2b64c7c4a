//! Discrete diffusion over protein sequences with germline-absorbing noise.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod files;
pub mod guidance;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod seq;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
