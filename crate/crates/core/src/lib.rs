//! Discrete-continuous ADMM for joint labeling and kernel classifier training
//! in higher-order Markov random fields.

pub mod admm;
pub mod baselines;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod mrf;
pub mod prox;
pub mod supervised;

pub use error::{Error, Result};
