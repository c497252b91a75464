pub mod bootstrap;
pub mod data;
pub mod error;
pub mod harness;
pub mod limit;
pub mod linalg;
pub mod lp;
pub mod midpoint;
pub mod objective;
pub mod qp;
pub mod rng;
pub mod search;
pub mod stats;

pub use error::{Error, Result};
