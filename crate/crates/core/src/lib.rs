//! Graph-structured encoder-decoder for multi-party dialogue response
//! generation.
//!
//! A session's utterances become vertices of a directed graph whose edges
//! follow reply relations and same-speaker relations. Each utterance is
//! encoded by a bidirectional LSTM, the graph encoder propagates information
//! along the edges (backward first, then forward), and an attentional GRU
//! decoder generates the response to the addressed utterance.

pub mod corpus;
pub mod decoder;
pub mod encoder;
mod error;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod trainer;
pub mod uge;

pub use error::{Error, ModelError};
pub use model::{AttendScope, Gsn, ModelDims, ModelOptions};
