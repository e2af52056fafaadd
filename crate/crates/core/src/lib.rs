pub mod besov;
pub mod config;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod grid;
pub mod kernel;
pub mod lemma;
pub mod smoothing;

pub use error::{Error, Result};
