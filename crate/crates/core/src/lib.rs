//! Reinforcement-learning tuner for file-system configuration parameters.

pub mod agent;
pub mod baseline;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod harness;
pub mod nnet;
pub mod objective;
pub mod param_space;
pub mod replay;

pub use error::{Error, Result};
