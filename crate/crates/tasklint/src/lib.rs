//! Name/body inconsistency linting for Ansible tasks.
//!
//! The pipeline parses Ansible YAML into per-task ASTs, serializes them
//! to token streams, trains per-module CBOW embeddings and CNN binary
//! classifiers over mutation-generated datasets, and applies the trained
//! models to flag tasks whose name contradicts their body.

pub mod ast;
pub mod cnn;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod model_repo;
pub mod pipeline;
pub mod textio;
pub mod tokenize;
pub mod yaml;

pub use error::{Error, Result};
