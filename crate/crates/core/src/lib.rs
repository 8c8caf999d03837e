//! Recurrent acoustic models (LSTM, GRU, zoneout LSTM, feed-forward ReLU)
//! trained from scratch, k-fold "crogging" ensembles with a regularization
//! post-layer, and a bigram Viterbi phone decoder with PER scoring.

pub mod cells;
pub mod corpus;
pub mod decoder;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod io;
pub mod model_io;
pub mod numeric;
pub mod regularization;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
