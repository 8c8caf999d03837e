//! Recurrent and feed-forward layers, and the stacked network built from them.

mod dense;
mod gru;
mod lstm;
mod network;

pub use dense::DenseParams;
pub use gru::{gru_step, GruParams};
pub use lstm::{lstm_step, zoneout_lstm_step, LstmParams};
pub use network::{
    backward_sequence, ff_forward, forward_sequence, forward_sequence_with, sample_noise, CellKind,
    LayerParams, NetworkConfig, Noise, NoiseMasks, ParamSet, RecurrentNetwork, TensorInfo,
};

pub use network::accumulate_gradients;

use crate::error::{Error, Result};
use crate::numeric::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Recurrent state of one layer. `c` is present for LSTM layers only.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vector,
    pub c: Option<Vector>,
}

impl LayerState {
    pub fn lstm(h: Vector, c: Vector) -> Self {
        Self { h, c: Some(c) }
    }

    pub fn gru(h: Vector) -> Self {
        Self { h, c: None }
    }

    pub fn zeros_lstm(dim: usize) -> Self {
        Self::lstm(Vector::zeros(dim), Vector::zeros(dim))
    }
}

/// Zoneout probabilities for the cell state (`d_c`) and output (`d_h`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneoutConfig {
    d_c: f64,
    d_h: f64,
}

impl ZoneoutConfig {
    pub fn new(d_c: f64, d_h: f64) -> Result<Self> {
        for (name, d) in [("d_c", d_c), ("d_h", d_h)] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Config(format!("zoneout {name} must be in [0,1], got {d}")));
            }
        }
        Ok(Self { d_c, d_h })
    }

    pub fn d_c(&self) -> f64 {
        self.d_c
    }

    pub fn d_h(&self) -> f64 {
        self.d_h
    }
}

impl Default for ZoneoutConfig {
    fn default() -> Self {
        Self { d_c: 0.5, d_h: 0.5 }
    }
}
