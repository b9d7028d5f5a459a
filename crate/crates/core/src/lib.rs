//! Continuous Cued Speech recognition from 2D landmarks.
//!
//! The crate covers the whole pipeline: landmark corpora (and a synthetic
//! generator), per-stream PCA features, multistream Bi-GRU recognizers trained
//! with CTC, greedy and lexicon-constrained decoding, and the evaluation
//! protocol (edit-distance accuracy, Wilson intervals, k-fold splits).

pub mod corpus;
pub mod ctc;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod lexicon;
pub mod network;
pub mod pipeline;
pub mod training;
mod util;

pub use error::{Error, Result};
