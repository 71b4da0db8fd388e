//! Spatio-temporal decomposition network for traffic forecasting: data
//! handling, graph preprocessing, the model and its training loop.

pub mod data;
mod error;
pub mod graph;
pub mod model;
pub mod params;
pub mod train;

pub use error::{Error, Result};
