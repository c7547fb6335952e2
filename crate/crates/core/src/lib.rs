//! Device surrogate models for gate-all-around transistors: a physics
//! oracle producing I-V data, a gated mixture of expert networks and its
//! baselines, derivative-regularized training, evaluation and a small
//! inverter simulator.

pub mod baselines;
pub mod circuit;
pub mod dataset;
pub mod device;
pub mod error;
pub mod evaluation;
pub mod loss;
pub mod model;
pub mod moe;
pub mod nn;
pub mod stencil;
pub mod training;

pub use error::{Error, Result};
