//! Semantic type detection for tabular data columns.
//!
//! A column is classified from two inputs: its raw cell values, rearranged
//! into text sequences by random permutation sampling, and a vector of 19
//! engineered column statistics. The classifier is a small bidirectional
//! LSTM network trained from scratch; inference can optionally take a
//! majority vote over several re-permuted views of the same column.
//!
//! Pipeline, by module:
//!
//! - [`ingest`]: datasets, class vocabularies, stratified splits, synthetic corpora
//! - [`features`]: the 19 column statistics and their z-score scaler
//! - [`augment`]: single- and multi-sequence permutation sampling
//! - [`tokenize`]: char, word and WordPiece tokenizers
//! - [`nn`]: tensors, the recurrent encoder and the classifier network
//! - [`train`]: loss, Adam, plateau scheduling, metrics and the training loop
//! - [`infer`]: single-shot and k-vote prediction, evaluation reports
//! - [`explain`]: engineered-feature importance from the projection weights
//! - [`bundle`]: the binary model artifact

pub mod augment;
pub mod bundle;
pub mod error;
pub mod explain;
pub mod features;
pub mod infer;
pub mod ingest;
pub mod nn;
pub mod rng;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
