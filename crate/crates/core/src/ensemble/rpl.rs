use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{content_lines, write_atomic};
use crate::model_io::fmt_f64;
use crate::numeric::{log_softmax, softmax, Matrix, Vector};
use crate::rng::Rng;

const PROB_FLOOR: f64 = 1e-30;

/// Per-class diagonal affine map on log-posteriors, followed by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct RplParams {
    pub d: Vector,
    pub b: Vector,
}

/// Gradient-descent settings for [`train_rpl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RplConfig {
    pub lr: f64,
    pub max_iters: usize,
    pub held_aside: f64,
}

impl Default for RplConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            max_iters: 200,
            held_aside: 0.1,
        }
    }
}

impl RplParams {
    pub fn identity(num_classes: usize) -> Self {
        Self {
            d: Vector::filled(num_classes, 1.0),
            b: Vector::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.d.dim()
    }

    fn logits(&self, log_p: &[f64]) -> Vector {
        Vector(
            log_p
                .iter()
                .zip(self.d.iter().zip(self.b.iter()))
                .map(|(&x, (d, b))| d * x.max(PROB_FLOOR.ln()) + b)
                .collect(),
        )
    }

    /// Output log-posteriors for input log-posteriors.
    pub fn apply_log(&self, log_p: &[f64]) -> Result<Vector> {
        if log_p.len() != self.num_classes() {
            return Err(Error::shape("apply_rpl", self.num_classes(), log_p.len()));
        }
        Ok(log_softmax(&self.logits(log_p)))
    }
}

/// `softmax(d ∘ log p + b)`, with probabilities floored at 1e-30 before the log.
pub fn apply_rpl(rpl: &RplParams, posteriors: &Vector) -> Result<Vector> {
    if posteriors.dim() != rpl.num_classes() {
        return Err(Error::shape("apply_rpl", rpl.num_classes(), posteriors.dim()));
    }
    let log_p: Vec<f64> = posteriors.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
    Ok(softmax(&rpl.logits(&log_p)))
}

struct Frames<'a> {
    rows: Vec<&'a [f64]>,
    labels: Vec<usize>,
}

fn mean_ce(rpl: &RplParams, frames: &Frames, idx: &[usize]) -> f64 {
    let total: f64 = idx
        .iter()
        .map(|&i| -log_softmax(&rpl.logits(frames.rows[i]))[frames.labels[i]])
        .sum();
    total / idx.len() as f64
}

/// Fits an RPL by full-batch gradient descent from the identity on frame
/// log-posteriors `predictions[u]` with labels `labels[u]`.
///
/// A seeded `held_aside` fraction of the frames is kept out of the fit; the
/// parameters with the lowest held-aside cross-entropy are returned, with the
/// identity always a candidate. A step that does not lower the training loss
/// is retried with half the step size.
pub fn train_rpl(predictions: &[Matrix], labels: &[Vec<usize>], cfg: &RplConfig, rng: &mut Rng) -> Result<RplParams> {
    fit_rpl(predictions, labels, cfg, rng).map(|f| f.params)
}

/// Result of [`fit_rpl`]: the chosen parameters and the held-aside
/// cross-entropies of the identity and of the chosen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RplFit {
    pub params: RplParams,
    pub identity_ce: f64,
    pub held_aside_ce: f64,
    pub iterations: usize,
}

/// [`train_rpl`] with its held-aside report.
pub fn fit_rpl(predictions: &[Matrix], labels: &[Vec<usize>], cfg: &RplConfig, rng: &mut Rng) -> Result<RplFit> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("train_rpl", predictions.len(), labels.len()));
    }
    let c = predictions.first().map_or(0, Matrix::cols);
    let mut frames = Frames {
        rows: Vec::new(),
        labels: Vec::new(),
    };
    for (m, l) in predictions.iter().zip(labels) {
        if m.rows() != l.len() || m.cols() != c {
            return Err(Error::shape("train_rpl", format!("{}x{c}", l.len()), m));
        }
        for (t, &y) in l.iter().enumerate() {
            if y >= c {
                return Err(Error::Index { index: y, len: c });
            }
            frames.rows.push(m.row(t));
            frames.labels.push(y);
        }
    }
    if frames.labels.len() < 2 {
        return Err(Error::Data("RPL training needs at least two frames".into()));
    }
    if frames.labels.iter().all(|&y| y == frames.labels[0]) {
        return Err(Error::Data("RPL training labels cover a single class".into()));
    }
    if !(cfg.held_aside > 0.0 && cfg.held_aside < 1.0) || !(cfg.lr > 0.0) {
        return Err(Error::Config("RPL needs 0 < held_aside < 1 and lr > 0".into()));
    }

    let mut order: Vec<usize> = (0..frames.labels.len()).collect();
    rng.shuffle(&mut order);
    let n_hold = ((cfg.held_aside * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
    let (hold, fit) = order.split_at(n_hold);

    let mut rpl = RplParams::identity(c);
    let identity_ce = mean_ce(&rpl, &frames, hold);
    let mut best = (identity_ce, rpl.clone());
    let mut iterations = 0;
    let mut loss = mean_ce(&rpl, &frames, fit);
    let mut lr = cfg.lr;
    let mut prev_hold = best.0;
    let inv = 1.0 / fit.len() as f64;

    for _ in 0..cfg.max_iters {
        let mut gd = vec![0.0; c];
        let mut gb = vec![0.0; c];
        for &i in fit {
            let x = frames.rows[i];
            let mut dz = softmax(&rpl.logits(x)).0;
            dz[frames.labels[i]] -= 1.0;
            for k in 0..c {
                gd[k] += dz[k] * x[k].max(PROB_FLOOR.ln()) * inv;
                gb[k] += dz[k] * inv;
            }
        }
        let step = |lr: f64| RplParams {
            d: Vector(rpl.d.iter().zip(&gd).map(|(d, g)| d - lr * g).collect()),
            b: Vector(rpl.b.iter().zip(&gb).map(|(b, g)| b - lr * g).collect()),
        };
        let mut next = step(lr);
        let mut next_loss = mean_ce(&next, &frames, fit);
        while !(next_loss < loss) && lr > 1e-12 {
            lr *= 0.5;
            next = step(lr);
            next_loss = mean_ce(&next, &frames, fit);
        }
        if !(next_loss < loss) {
            break;
        }
        rpl = next;
        loss = next_loss;
        iterations += 1;
        let hold_ce = mean_ce(&rpl, &frames, hold);
        if hold_ce < best.0 {
            best = (hold_ce, rpl.clone());
        }
        if hold_ce > prev_hold {
            break;
        }
        prev_hold = hold_ce;
    }
    Ok(RplFit {
        params: best.1,
        identity_ce,
        held_aside_ce: best.0,
        iterations,
    })
}

const RPL_MAGIC: &str = "nnam-rpl";
const RPL_VERSION: &str = "v1";

pub fn rpl_to_string(rpl: &RplParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{RPL_MAGIC} {RPL_VERSION} {}", rpl.num_classes());
    for (name, v) in [("d", &rpl.d), ("b", &rpl.b)] {
        let vals: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(s, "{name} {}", vals.join(" "));
    }
    s
}

pub fn save_rpl(path: &Path, rpl: &RplParams) -> Result<()> {
    write_atomic(path, rpl_to_string(rpl).as_bytes())
}

pub fn load_rpl(path: &Path) -> Result<RplParams> {
    let text = fs::read_to_string(path)?;
    let mut lines = content_lines(&text);
    let (no, header) = lines.next().ok_or_else(|| Error::parse(path, 0, "empty RPL file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != RPL_MAGIC || h[1] != RPL_VERSION {
        return Err(Error::parse(path, no, format!("expected `{RPL_MAGIC} {RPL_VERSION} <classes>`")));
    }
    let c: usize = h[2]
        .parse()
        .map_err(|_| Error::parse(path, no, format!("bad class count `{}`", h[2])))?;
    let mut read = |name: &str| -> Result<Vector> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing `{name}` row")))?;
        let mut f = line.split_whitespace();
        if f.next() != Some(name) {
            return Err(Error::parse(path, no, format!("expected `{name}` row")));
        }
        let v = f
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, no, format!("bad number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != c {
            return Err(Error::parse(path, no, format!("`{name}` has {} values, expected {c}", v.len())));
        }
        Ok(Vector(v))
    };
    let d = read("d")?;
    let b = read("b")?;
    Ok(RplParams { d, b })
}
