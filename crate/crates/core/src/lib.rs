//! Task-adaptive meta-learning: a pool of meta-models arranged in an
//! easy-to-hard task hierarchy, with the baselines it is compared against.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod harness;
pub mod hierarchy;
pub mod metalearn;
pub mod seed;
pub mod tasks;

pub use error::{Error, Result};
