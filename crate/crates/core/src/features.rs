//! Input normalization and context-window frame stacking.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Vector};

const SCALE_FLOOR: f64 = 1e-6;

/// Per-dimension affine input transform `(x − shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub shift: Vector,
    pub scale: Vector,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: Vector::zeros(dim),
            scale: Vector::filled(dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.dim()
    }

    /// Mean and (population) standard deviation over every frame of every
    /// sequence, std floored at 1e-6.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut seqs = Vec::new();
        for m in sequences {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
            } else if m.cols() != sum.len() {
                return Err(Error::shape("fit_normalizer", sum.len(), m.cols()));
            }
            for r in 0..m.rows() {
                for (s, v) in sum.iter_mut().zip(m.row(r)) {
                    *s += v;
                }
            }
            count += m.rows();
            seqs.push(m);
        }
        if count == 0 {
            return Err(Error::Data("cannot fit a normalizer on an empty dataset".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; mean.len()];
        for m in &seqs {
            for r in 0..m.rows() {
                for ((s, v), mu) in sq.iter_mut().zip(m.row(r)).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
        }
        let scale = sq
            .iter()
            .map(|s| (s / count as f64).sqrt().max(SCALE_FLOOR))
            .collect();
        Ok(Self {
            shift: Vector(mean),
            scale: Vector(scale),
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(self.scale.iter()))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Concatenates each frame with its `context / 2` neighbours on either side,
/// repeating the first/last frame past the sequence edges.
pub fn stack_frames(seq: &Matrix, context: usize) -> Result<Matrix> {
    if context % 2 == 0 {
        return Err(Error::Config(format!("context must be odd, got {context}")));
    }
    let half = (context / 2) as isize;
    let t_len = seq.rows() as isize;
    let d = seq.cols();
    let mut data = Vec::with_capacity(seq.rows() * d * context);
    for t in 0..t_len {
        for off in -half..=half {
            let src = (t + off).clamp(0, t_len - 1) as usize;
            data.extend_from_slice(seq.row(src));
        }
    }
    Matrix::from_vec(seq.rows(), d * context, data)
}
