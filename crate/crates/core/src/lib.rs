pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod cli;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod models;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod training;
