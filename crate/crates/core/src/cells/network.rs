//! Stacked network over a sequence: forward pass, exact BPTT, and a flat view
//! of the parameters for optimizers and gradient checking.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{stack_frames, Normalizer};
use crate::numeric::{log_softmax, relu_scalar, Matrix, Vector};
use crate::regularization::dropout_mask;
use crate::rng::Rng;

use super::dense::DenseParams;
use super::gru::{self, GruCache, GruParams};
use super::lstm::{self, LstmCache, LstmParams};
use super::{Mode, ZoneoutConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Lstm,
    Gru,
    ZoneoutLstm,
    FeedForward,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Lstm, CellKind::Gru, CellKind::ZoneoutLstm, CellKind::FeedForward];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::ZoneoutLstm => "zoneout",
            CellKind::FeedForward => "ff",
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != CellKind::FeedForward
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "zoneout" | "zoneout-lstm" => Ok(CellKind::ZoneoutLstm),
            "ff" | "feed-forward" | "feedforward" => Ok(CellKind::FeedForward),
            other => Err(Error::Config(format!("unknown cell kind `{other}`"))),
        }
    }
}

/// Architecture of a [`RecurrentNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub kind: CellKind,
    /// Raw per-frame feature dimension, before stacking.
    pub feature_dim: usize,
    /// Frames stacked per input (odd).
    pub context: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    /// Output delay in frames; ignored for feed-forward nets.
    pub delay: usize,
    pub dropout: f64,
    pub zoneout: ZoneoutConfig,
}

impl NetworkConfig {
    pub fn input_dim(&self) -> usize {
        self.feature_dim * self.context
    }

    pub fn effective_delay(&self) -> usize {
        if self.kind.is_recurrent() {
            self.delay
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("feature_dim and num_classes must be positive".into()));
        }
        if self.context % 2 == 0 {
            return Err(Error::Config(format!("context must be odd, got {}", self.context)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden layer sizes must be positive, got {:?}", self.hidden)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        ZoneoutConfig::new(self.zoneout.d_c(), self.zoneout.d_h())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Lstm(LstmParams),
    Gru(GruParams),
    Dense(DenseParams),
}

impl LayerParams {
    pub fn output_dim(&self) -> usize {
        match self {
            LayerParams::Lstm(p) => p.hidden_dim(),
            LayerParams::Gru(p) => p.hidden_dim(),
            LayerParams::Dense(p) => p.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            LayerParams::Lstm(p) => p.input_dim(),
            LayerParams::Gru(p) => p.input_dim(),
            LayerParams::Dense(p) => p.input_dim(),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            LayerParams::Lstm(p) => LayerParams::Lstm(LstmParams::zeros(p.input_dim(), p.hidden_dim())),
            LayerParams::Gru(p) => LayerParams::Gru(GruParams::zeros(p.input_dim(), p.hidden_dim())),
            LayerParams::Dense(p) => LayerParams::Dense(DenseParams::zeros(p.input_dim(), p.output_dim())),
        }
    }

    fn tensors(&self) -> Vec<(&'static str, usize, usize, &[f64])> {
        let (n, m) = (self.output_dim(), self.input_dim());
        let shape = |name: &str| -> (usize, usize) {
            if name.starts_with('b') {
                (n, 1)
            } else if name.starts_with("W_h") || name.starts_with('U') {
                (n, n)
            } else {
                (n, m)
            }
        };
        let named: Vec<(&'static str, &[f64])> = match self {
            LayerParams::Lstm(p) => p.tensors().to_vec(),
            LayerParams::Gru(p) => p.tensors().to_vec(),
            LayerParams::Dense(p) => p.tensors().to_vec(),
        };
        named
            .into_iter()
            .map(|(name, data)| {
                let (r, c) = shape(name);
                (name, r, c, data)
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::Lstm(p) => p.tensors_mut().into_iter().collect(),
            LayerParams::Gru(p) => p.tensors_mut().into_iter().collect(),
            LayerParams::Dense(p) => p.tensors_mut().into_iter().collect(),
        }
    }
}

/// Name, shape and flat offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
    pub output: DenseParams,
}

impl ParamSet {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            output: DenseParams::zeros(self.output.input_dim(), self.output.output_dim()),
        }
    }

    fn named_tensors(&self) -> Vec<(String, usize, usize, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, r, c, data) in layer.tensors() {
                out.push((format!("layer{l}.{name}"), r, c, data));
            }
        }
        let (n, m) = (self.output.output_dim(), self.output.input_dim());
        out.push(("output.W".to_string(), n, m, self.output.w.as_slice()));
        out.push(("output.b".to_string(), n, 1, self.output.b.as_slice()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.output.tensors_mut());
        out
    }

    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        let mut offset = 0;
        self.named_tensors()
            .into_iter()
            .map(|(name, rows, cols, _)| {
                let info = TensorInfo { name, rows, cols, offset };
                offset += rows * cols;
                info
            })
            .collect()
    }

    /// Tensor values in [`ParamSet::tensor_infos`] order.
    pub fn tensor_values(&self) -> Vec<&[f64]> {
        self.named_tensors().into_iter().map(|(_, _, _, d)| d).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensor_values().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for t in self.tensor_values() {
            flat.extend_from_slice(t);
        }
        flat
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("load_flat", n, flat.len()));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        let theirs = other.tensor_values();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensor_values().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }
}

/// Stacked layers with a softmax output layer and an input normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentNetwork {
    pub config: NetworkConfig,
    pub params: ParamSet,
    pub normalizer: Normalizer,
}

impl RecurrentNetwork {
    pub fn new(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.hidden.len());
        let mut input = config.input_dim();
        for &n in &config.hidden {
            layers.push(match config.kind {
                CellKind::Lstm | CellKind::ZoneoutLstm => LayerParams::Lstm(LstmParams::init(input, n, rng)),
                CellKind::Gru => LayerParams::Gru(GruParams::init(input, n, rng)),
                CellKind::FeedForward => LayerParams::Dense(DenseParams::init(input, n, rng)),
            });
            input = n;
        }
        let output = DenseParams::init(input, config.num_classes, rng);
        let normalizer = Normalizer::identity(config.input_dim());
        Ok(Self {
            config,
            params: ParamSet { layers, output },
            normalizer,
        })
    }

    /// Assembles a network from explicit parts, checking that they chain.
    pub fn from_parts(config: NetworkConfig, params: ParamSet, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        if params.layers.len() != config.hidden.len() {
            return Err(Error::shape("network layers", config.hidden.len(), params.layers.len()));
        }
        let mut input = config.input_dim();
        for (layer, &n) in params.layers.iter().zip(&config.hidden) {
            let kind_ok = matches!(
                (config.kind, layer),
                (CellKind::Lstm | CellKind::ZoneoutLstm, LayerParams::Lstm(_))
                    | (CellKind::Gru, LayerParams::Gru(_))
                    | (CellKind::FeedForward, LayerParams::Dense(_))
            );
            if !kind_ok {
                return Err(Error::Config(format!("layer type does not match cell kind {}", config.kind)));
            }
            if layer.input_dim() != input || layer.output_dim() != n {
                return Err(Error::shape(
                    "network layer",
                    format!("{input}->{n}"),
                    format!("{}->{}", layer.input_dim(), layer.output_dim()),
                ));
            }
            input = n;
        }
        if params.output.input_dim() != input || params.output.output_dim() != config.num_classes {
            return Err(Error::shape(
                "output layer",
                format!("{input}->{}", config.num_classes),
                format!("{}->{}", params.output.input_dim(), params.output.output_dim()),
            ));
        }
        if normalizer.dim() != config.input_dim() {
            return Err(Error::shape("normalizer", config.input_dim(), normalizer.dim()));
        }
        Ok(Self {
            config,
            params,
            normalizer,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.config.kind
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Stacked and normalized inputs, one row per frame.
    pub fn prepare_inputs(&self, features: &Matrix) -> Result<Vec<Vec<f64>>> {
        if features.rows() == 0 {
            return Err(Error::EmptyInput("sequence has no frames"));
        }
        if features.cols() != self.config.feature_dim {
            return Err(Error::shape(
                "forward_sequence",
                format!("feature dim {}", self.config.feature_dim),
                format!("frames {features}"),
            ));
        }
        let stacked = stack_frames(features, self.config.context)?;
        Ok((0..stacked.rows()).map(|t| self.normalizer.apply(stacked.row(t))).collect())
    }
}

/// Sampled stochastic masks for one sequence, indexed `[layer][step][unit]`.
/// Empty per-layer vectors mean "no mask".
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMasks {
    pub dropout: Vec<Vec<Vec<f64>>>,
    pub keep_c: Vec<Vec<Vec<f64>>>,
    pub keep_h: Vec<Vec<Vec<f64>>>,
}

/// Evaluation mode, or training mode with masks fixed in advance.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Eval,
    Fixed(NoiseMasks),
}

/// Draws dropout and zoneout masks for a sequence of `frames` frames.
pub fn sample_noise(net: &RecurrentNetwork, frames: usize, rng: &mut Rng) -> NoiseMasks {
    let cfg = &net.config;
    let steps = frames + cfg.effective_delay();
    let mut masks = NoiseMasks {
        dropout: Vec::new(),
        keep_c: Vec::new(),
        keep_h: Vec::new(),
    };
    for &n in &cfg.hidden {
        if cfg.kind == CellKind::ZoneoutLstm {
            let mut kc = Vec::with_capacity(steps);
            let mut kh = Vec::with_capacity(steps);
            for _ in 0..steps {
                let (c, h) = lstm::zoneout_keep(&cfg.zoneout, n, Mode::Train, rng);
                kc.push(c);
                kh.push(h);
            }
            masks.keep_c.push(kc);
            masks.keep_h.push(kh);
        } else {
            masks.keep_c.push(Vec::new());
            masks.keep_h.push(Vec::new());
        }
        if cfg.dropout > 0.0 {
            masks
                .dropout
                .push((0..steps).map(|_| dropout_mask(n, cfg.dropout, rng)).collect());
        } else {
            masks.dropout.push(Vec::new());
        }
    }
    masks
}

enum LayerTrace {
    Lstm(Vec<LstmCache>),
    Gru(Vec<GruCache>),
    /// Pre-activations per step.
    Dense(Vec<Vec<f64>>),
}

struct Trace {
    /// `inputs[l][τ]`: input to layer `l` at step `τ`; the last entry holds
    /// the top hidden output (after dropout), i.e. the output layer's input.
    inputs: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerTrace>,
    /// Log-posteriors for steps `delay..steps`.
    log_probs: Vec<Vec<f64>>,
}

fn run_forward(net: &RecurrentNetwork, features: &Matrix, noise: &Noise) -> Result<Trace> {
    let cfg = &net.config;
    let prepared = net.prepare_inputs(features)?;
    let t_len = prepared.len();
    let delay = cfg.effective_delay();
    let steps = t_len + delay;
    let mut current: Vec<Vec<f64>> = (0..steps).map(|s| prepared[s.min(t_len - 1)].clone()).collect();

    let eval_keep = |n: usize| (vec![cfg.zoneout.d_c(); n], vec![cfg.zoneout.d_h(); n]);
    let mut inputs = Vec::with_capacity(cfg.hidden.len() + 1);
    let mut traces = Vec::with_capacity(cfg.hidden.len());

    for (l, layer) in net.params.layers.iter().enumerate() {
        let n = layer.output_dim();
        let mut outputs = Vec::with_capacity(steps);
        let trace = match layer {
            LayerParams::Lstm(p) => {
                let mut caches = Vec::with_capacity(steps);
                let mut h = vec![0.0; n];
                let mut c = vec![0.0; n];
                let zoned = cfg.kind == CellKind::ZoneoutLstm;
                let (eval_c, eval_h) = eval_keep(n);
                for (s, x) in current.iter().enumerate() {
                    let keep = match (zoned, noise) {
                        (false, _) => None,
                        (true, Noise::Eval) => Some((eval_c.as_slice(), eval_h.as_slice())),
                        (true, Noise::Fixed(m)) => Some((m.keep_c[l][s].as_slice(), m.keep_h[l][s].as_slice())),
                    };
                    let (h_new, c_new, cache) = lstm::forward_step(p, x, &h, &c, keep);
                    outputs.push(h_new.clone());
                    caches.push(cache);
                    h = h_new;
                    c = c_new;
                }
                LayerTrace::Lstm(caches)
            }
            LayerParams::Gru(p) => {
                let mut caches = Vec::with_capacity(steps);
                let mut h = vec![0.0; n];
                for x in &current {
                    let (h_new, cache) = gru::forward_step(p, x, &h);
                    outputs.push(h_new.clone());
                    caches.push(cache);
                    h = h_new;
                }
                LayerTrace::Gru(caches)
            }
            LayerParams::Dense(p) => {
                let mut pre = Vec::with_capacity(steps);
                for x in &current {
                    let a = p.apply(x);
                    outputs.push(a.iter().map(|&v| relu_scalar(v)).collect());
                    pre.push(a);
                }
                LayerTrace::Dense(pre)
            }
        };
        if let Noise::Fixed(m) = noise {
            if let Some(masks) = m.dropout.get(l).filter(|d| !d.is_empty()) {
                for (y, mask) in outputs.iter_mut().zip(masks) {
                    y.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
                }
            }
        }
        inputs.push(std::mem::replace(&mut current, outputs));
        traces.push(trace);
    }

    let log_probs = current[delay..]
        .iter()
        .map(|y| log_softmax(&Vector(net.params.output.apply(y))).0)
        .collect();
    inputs.push(current);
    Ok(Trace {
        inputs,
        layers: traces,
        log_probs,
    })
}

fn to_matrix(rows: Vec<Vec<f64>>, cols: usize) -> Matrix {
    let n = rows.len();
    Matrix::from_vec(n, cols, rows.into_iter().flatten().collect()).expect("consistent rows")
}

/// T×C log-posteriors; row `t` is the network output at step `t + delay`.
pub fn forward_sequence(net: &RecurrentNetwork, features: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Matrix> {
    let noise = match mode {
        Mode::Eval => Noise::Eval,
        Mode::Train => Noise::Fixed(sample_noise(net, features.rows(), rng)),
    };
    forward_sequence_with(net, features, &noise)
}

pub fn forward_sequence_with(net: &RecurrentNetwork, features: &Matrix, noise: &Noise) -> Result<Matrix> {
    let trace = run_forward(net, features, noise)?;
    Ok(to_matrix(trace.log_probs, net.num_classes()))
}

/// Log-posteriors for a single already-stacked input vector of a
/// feed-forward net.
pub fn ff_forward(net: &RecurrentNetwork, x: &Vector, mode: Mode, rng: &mut Rng) -> Result<Vector> {
    if net.kind() != CellKind::FeedForward {
        return Err(Error::Config(format!("ff_forward on a {} network", net.kind())));
    }
    if x.dim() != net.config.input_dim() {
        return Err(Error::shape("ff_forward", net.config.input_dim(), x.dim()));
    }
    let mut h = net.normalizer.apply(&x.0);
    for layer in &net.params.layers {
        let LayerParams::Dense(p) = layer else {
            unreachable!("feed-forward nets hold dense layers")
        };
        h = p.apply(&h).into_iter().map(relu_scalar).collect();
        if mode == Mode::Train && net.config.dropout > 0.0 {
            let mask = dropout_mask(h.len(), net.config.dropout, rng);
            h.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
        }
    }
    Ok(log_softmax(&Vector(net.params.output.apply(&h))))
}

/// Adds the gradient of the *summed* frame cross-entropy to `grads` and
/// returns that sum.
pub fn accumulate_gradients(
    net: &RecurrentNetwork,
    features: &Matrix,
    targets: &[usize],
    noise: &Noise,
    grads: &mut ParamSet,
) -> Result<f64> {
    if targets.len() != features.rows() {
        return Err(Error::shape("backward_sequence", features.rows(), targets.len()));
    }
    let c = net.num_classes();
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Index { index: bad, len: c });
    }
    let trace = run_forward(net, features, noise)?;
    let delay = net.config.effective_delay();
    let steps = targets.len() + delay;
    let top = trace.inputs.last().expect("output input");

    let mut loss = 0.0;
    let mut dy: Vec<Vec<f64>> = vec![vec![0.0; top[0].len()]; steps];
    for (t, (lp, &target)) in trace.log_probs.iter().zip(targets).enumerate() {
        loss -= lp[target];
        let mut dz: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        dz[target] -= 1.0;
        let s = t + delay;
        net.params.output.backward(&top[s], &dz, &mut grads.output, Some(&mut dy[s]));
    }

    for l in (0..net.params.layers.len()).rev() {
        if let Noise::Fixed(m) = noise {
            if let Some(masks) = m.dropout.get(l).filter(|d| !d.is_empty()) {
                for (d, mask) in dy.iter_mut().zip(masks) {
                    d.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
                }
            }
        }
        let in_dim = net.params.layers[l].input_dim();
        let mut dx = vec![vec![0.0; in_dim]; steps];
        match (&net.params.layers[l], &trace.layers[l], &mut grads.layers[l]) {
            (LayerParams::Lstm(p), LayerTrace::Lstm(caches), LayerParams::Lstm(g)) => {
                let n = p.hidden_dim();
                let mut dh_next = vec![0.0; n];
                let mut dc_next = vec![0.0; n];
                for s in (0..steps).rev() {
                    let dh: Vec<f64> = dy[s].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                    let (dh_prev, dc_prev) = lstm::backward_step(p, &caches[s], &dh, &dc_next, g, &mut dx[s]);
                    dh_next = dh_prev;
                    dc_next = dc_prev;
                }
            }
            (LayerParams::Gru(p), LayerTrace::Gru(caches), LayerParams::Gru(g)) => {
                let mut dh_next = vec![0.0; p.hidden_dim()];
                for s in (0..steps).rev() {
                    let dh: Vec<f64> = dy[s].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                    dh_next = gru::backward_step(p, &caches[s], &dh, g, &mut dx[s]);
                }
            }
            (LayerParams::Dense(p), LayerTrace::Dense(pre), LayerParams::Dense(g)) => {
                for s in 0..steps {
                    let da: Vec<f64> = dy[s]
                        .iter()
                        .zip(&pre[s])
                        .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
                        .collect();
                    p.backward(&trace.inputs[l][s], &da, g, Some(&mut dx[s]));
                }
            }
            _ => return Err(Error::Config("gradient container does not match network".into())),
        }
        dy = dx;
    }
    Ok(loss)
}

/// Mean frame cross-entropy and its exact gradient with the masks in `noise`
/// held fixed.
pub fn backward_sequence(
    net: &RecurrentNetwork,
    features: &Matrix,
    targets: &[usize],
    noise: &Noise,
) -> Result<(f64, ParamSet)> {
    let mut grads = net.params.zeros_like();
    let loss = accumulate_gradients(net, features, targets, noise, &mut grads)?;
    let inv = 1.0 / targets.len() as f64;
    grads.scale(inv);
    Ok((loss * inv, grads))
}
