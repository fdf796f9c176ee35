//! Relation classification and extraction for entity-annotated scientific
//! abstracts.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod ngram_lm;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
