//! Command-line pipeline over `nnam-core`: synthesis, training, ensembles,
//! decoding, scoring, gradient checks and repeated experiments.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod setup;
