//! LSTM without peepholes, plus the zoneout variant.
//!
//! ```text
//! i = σ(W_xi x + W_hi h + b_i)      f = σ(W_xf x + W_hf h + b_f)
//! o = σ(W_xo x + W_ho h + b_o)      g = tanh(W_xc x + W_hc h + b_c)
//! c' = f ∗ c + i ∗ g                h' = o ∗ tanh(c')
//! ```
//!
//! Zoneout then mixes the candidate with the previous state per unit:
//! `c_t = k_c ∗ c + (1 − k_c) ∗ c'`, where `k_c` is a Bernoulli(d_c) mask in
//! training and the constant `d_c` at evaluation (same for `h`).

use crate::error::{Error, Result};
use crate::numeric::{sigmoid_scalar, Matrix, Vector};
use crate::rng::Rng;

use super::{LayerState, Mode, ZoneoutConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_xi: Matrix,
    pub w_hi: Matrix,
    pub w_xf: Matrix,
    pub w_hf: Matrix,
    pub w_xo: Matrix,
    pub w_ho: Matrix,
    pub w_xc: Matrix,
    pub w_hc: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_o: Vector,
    pub b_c: Vector,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let wx = || Matrix::zeros(hidden_dim, input_dim);
        let wh = || Matrix::zeros(hidden_dim, hidden_dim);
        let b = || Vector::zeros(hidden_dim);
        Self {
            w_xi: wx(),
            w_hi: wh(),
            w_xf: wx(),
            w_hf: wh(),
            w_xo: wx(),
            w_ho: wh(),
            w_xc: wx(),
            w_hc: wh(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    /// Glorot-uniform weights, zero biases except `b_f = 1`.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let mut wx = || Matrix::glorot(hidden_dim, input_dim, rng);
        let (w_xi, w_xf, w_xo, w_xc) = (wx(), wx(), wx(), wx());
        let mut wh = || Matrix::glorot(hidden_dim, hidden_dim, rng);
        let (w_hi, w_hf, w_ho, w_hc) = (wh(), wh(), wh(), wh());
        Self {
            w_xi,
            w_hi,
            w_xf,
            w_hf,
            w_xo,
            w_ho,
            w_xc,
            w_hc,
            b_i: Vector::zeros(hidden_dim),
            b_f: Vector::filled(hidden_dim, 1.0),
            b_o: Vector::zeros(hidden_dim),
            b_c: Vector::zeros(hidden_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xi.rows()
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &[f64]); 12] {
        [
            ("W_xi", self.w_xi.as_slice()),
            ("W_hi", self.w_hi.as_slice()),
            ("W_xf", self.w_xf.as_slice()),
            ("W_hf", self.w_hf.as_slice()),
            ("W_xo", self.w_xo.as_slice()),
            ("W_ho", self.w_ho.as_slice()),
            ("W_xc", self.w_xc.as_slice()),
            ("W_hc", self.w_hc.as_slice()),
            ("b_i", self.b_i.as_slice()),
            ("b_f", self.b_f.as_slice()),
            ("b_o", self.b_o.as_slice()),
            ("b_c", self.b_c.as_slice()),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            self.w_xi.as_mut_slice(),
            self.w_hi.as_mut_slice(),
            self.w_xf.as_mut_slice(),
            self.w_hf.as_mut_slice(),
            self.w_xo.as_mut_slice(),
            self.w_ho.as_mut_slice(),
            self.w_xc.as_mut_slice(),
            self.w_hc.as_mut_slice(),
            self.b_i.as_mut_slice(),
            self.b_f.as_mut_slice(),
            self.b_o.as_mut_slice(),
            self.b_c.as_mut_slice(),
        ]
    }

    fn check(&self, x: &Vector, state: &LayerState) -> Result<()> {
        if x.dim() != self.input_dim() {
            return Err(Error::shape("lstm_step", format!("input {}", self.input_dim()), format!("x {}", x.dim())));
        }
        let n = self.hidden_dim();
        let c_dim = state.c.as_ref().map_or(usize::MAX, |c| c.dim());
        if state.h.dim() != n || c_dim != n {
            return Err(Error::shape(
                "lstm_step",
                format!("hidden {n}"),
                format!("state h {} c {}", state.h.dim(), state.c.as_ref().map_or(0, |c| c.dim())),
            ));
        }
        Ok(())
    }
}

/// Everything backward needs from one forward step.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_cand: Vec<f64>,
    keep_c: Option<Vec<f64>>,
    keep_h: Option<Vec<f64>>,
}

fn pre_activation(wx: &Matrix, wh: &Matrix, b: &Vector, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut a = b.0.clone();
    wx.mul_vec_acc(x, &mut a);
    wh.mul_vec_acc(h, &mut a);
    a
}

/// One step; `keep` supplies zoneout keep factors for (c, h), if any.
pub(crate) fn forward_step(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    keep: Option<(&[f64], &[f64])>,
) -> (Vec<f64>, Vec<f64>, LstmCache) {
    let i: Vec<f64> = pre_activation(&p.w_xi, &p.w_hi, &p.b_i, x, h_prev)
        .into_iter()
        .map(sigmoid_scalar)
        .collect();
    let f: Vec<f64> = pre_activation(&p.w_xf, &p.w_hf, &p.b_f, x, h_prev)
        .into_iter()
        .map(sigmoid_scalar)
        .collect();
    let o: Vec<f64> = pre_activation(&p.w_xo, &p.w_ho, &p.b_o, x, h_prev)
        .into_iter()
        .map(sigmoid_scalar)
        .collect();
    let g: Vec<f64> = pre_activation(&p.w_xc, &p.w_hc, &p.b_c, x, h_prev)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let n = g.len();
    let c_cand: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_cand: Vec<f64> = c_cand.iter().map(|v| v.tanh()).collect();
    let h_cand: Vec<f64> = (0..n).map(|k| o[k] * tanh_cand[k]).collect();

    let (c, h) = match keep {
        None => (c_cand, h_cand),
        Some((kc, kh)) => (
            (0..n).map(|k| kc[k] * c_prev[k] + (1.0 - kc[k]) * c_cand[k]).collect(),
            (0..n).map(|k| kh[k] * h_prev[k] + (1.0 - kh[k]) * h_cand[k]).collect(),
        ),
    };
    let cache = LstmCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        o,
        g,
        tanh_cand,
        keep_c: keep.map(|(kc, _)| kc.to_vec()),
        keep_h: keep.map(|(_, kh)| kh.to_vec()),
    };
    (h, c, cache)
}

/// Backward through one step. `dh`, `dc` are total gradients w.r.t. this
/// step's outputs. Accumulates parameter gradients into `grads` and the input
/// gradient into `dx`; returns gradients w.r.t. `(h_prev, c_prev)`.
pub(crate) fn backward_step(
    p: &LstmParams,
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = dh.len();
    let mut dh_prev = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    let mut da_i = vec![0.0; n];
    let mut da_f = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    let mut da_g = vec![0.0; n];
    for k in 0..n {
        let (kc, kh) = match (&cache.keep_c, &cache.keep_h) {
            (Some(kc), Some(kh)) => (kc[k], kh[k]),
            _ => (0.0, 0.0),
        };
        let dh_cand = (1.0 - kh) * dh[k];
        dh_prev[k] += kh * dh[k];
        let tc = cache.tanh_cand[k];
        let dc_cand = (1.0 - kc) * dc[k] + dh_cand * cache.o[k] * (1.0 - tc * tc);
        dc_prev[k] = kc * dc[k] + dc_cand * cache.f[k];
        let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
        da_o[k] = dh_cand * tc * o * (1.0 - o);
        da_i[k] = dc_cand * g * i * (1.0 - i);
        da_f[k] = dc_cand * cache.c_prev[k] * f * (1.0 - f);
        da_g[k] = dc_cand * i * (1.0 - g * g);
    }
    let gates = [
        (&da_i, &p.w_xi, &p.w_hi),
        (&da_f, &p.w_xf, &p.w_hf),
        (&da_o, &p.w_xo, &p.w_ho),
        (&da_g, &p.w_xc, &p.w_hc),
    ];
    for (da, wx, wh) in gates {
        wx.mul_vec_t_acc(da, dx);
        wh.mul_vec_t_acc(da, &mut dh_prev);
    }
    grads.w_xi.add_outer(&da_i, &cache.x);
    grads.w_hi.add_outer(&da_i, &cache.h_prev);
    grads.w_xf.add_outer(&da_f, &cache.x);
    grads.w_hf.add_outer(&da_f, &cache.h_prev);
    grads.w_xo.add_outer(&da_o, &cache.x);
    grads.w_ho.add_outer(&da_o, &cache.h_prev);
    grads.w_xc.add_outer(&da_g, &cache.x);
    grads.w_hc.add_outer(&da_g, &cache.h_prev);
    for k in 0..n {
        grads.b_i[k] += da_i[k];
        grads.b_f[k] += da_f[k];
        grads.b_o[k] += da_o[k];
        grads.b_c[k] += da_g[k];
    }
    (dh_prev, dc_prev)
}

pub fn lstm_step(p: &LstmParams, x: &Vector, state: &LayerState) -> Result<LayerState> {
    p.check(x, state)?;
    let c_prev = state.c.as_ref().expect("checked");
    let (h, c, _) = forward_step(p, &x.0, &state.h.0, &c_prev.0, None);
    Ok(LayerState::lstm(Vector(h), Vector(c)))
}

/// Per-unit keep factors for one step: Bernoulli masks in training, the
/// zoneout probabilities themselves at evaluation.
pub(crate) fn zoneout_keep(z: &ZoneoutConfig, n: usize, mode: Mode, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    match mode {
        Mode::Eval => (vec![z.d_c(); n], vec![z.d_h(); n]),
        Mode::Train => {
            let kc = (0..n).map(|_| if rng.bernoulli(z.d_c()) { 1.0 } else { 0.0 }).collect();
            let kh = (0..n).map(|_| if rng.bernoulli(z.d_h()) { 1.0 } else { 0.0 }).collect();
            (kc, kh)
        }
    }
}

pub fn zoneout_lstm_step(
    p: &LstmParams,
    z: &ZoneoutConfig,
    x: &Vector,
    state: &LayerState,
    mode: Mode,
    rng: &mut Rng,
) -> Result<LayerState> {
    p.check(x, state)?;
    let c_prev = state.c.as_ref().expect("checked");
    let (kc, kh) = zoneout_keep(z, p.hidden_dim(), mode, rng);
    let (h, c, _) = forward_step(p, &x.0, &state.h.0, &c_prev.0, Some((&kc, &kh)));
    Ok(LayerState::lstm(Vector(h), Vector(c)))
}
