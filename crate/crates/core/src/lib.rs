pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod runner;

pub use error::{Error, Result};
