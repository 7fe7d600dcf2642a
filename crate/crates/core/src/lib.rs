pub mod baselines;
pub mod broadcast;
pub mod clustering;
pub mod config;
pub mod coordination;
pub mod data;
pub mod error;
pub mod model;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
