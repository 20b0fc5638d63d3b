pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod representation;
mod special;
pub mod trace;

pub use error::{Error, Result};
