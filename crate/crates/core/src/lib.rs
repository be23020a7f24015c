//! News-cycle analysis: corpus handling, preprocessing, embeddings, event
//! partitioning, daily signals, term relevance and cross-event aggregation.

pub mod aggregate;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod gdelt;
pub mod partition;
pub mod pipeline;
pub mod preprocess;
pub mod relevance;
pub mod report;
pub mod signals;
pub mod synth;

pub use error::{Error, Result};
