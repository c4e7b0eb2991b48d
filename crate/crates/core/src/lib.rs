pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod feature_opt;
pub mod linear;
pub mod model;
pub mod nn;
pub mod routing;
pub mod tree;

pub use error::{ErrorKind, Result, TlmError};
