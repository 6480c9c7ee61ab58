pub mod data;
pub mod error;
pub mod fusion;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
