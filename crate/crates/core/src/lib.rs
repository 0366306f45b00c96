pub mod data;
pub mod error;
pub mod evaluation;
mod gaussian;
pub mod fusion;
pub mod global_ranker;
pub mod local_ranker;
pub mod nn;
pub mod pipeline;
pub mod segmentation;
pub mod seed;

pub use error::{Error, Result};
