//! Self-supervised multi-view pre-training for multi-omics tables and the
//! frozen-encoder semi-supervised classification protocol built on it.

pub mod config;
pub mod corruption;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod losses;
pub mod model;
pub mod optim;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
