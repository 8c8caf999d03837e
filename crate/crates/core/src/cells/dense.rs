use crate::numeric::{Matrix, Vector};
use crate::rng::Rng;

/// Fully connected layer `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vector,
}

impl DenseParams {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            w: Matrix::zeros(output_dim, input_dim),
            b: Vector::zeros(output_dim),
        }
    }

    pub fn init(input_dim: usize, output_dim: usize, rng: &mut Rng) -> Self {
        Self {
            w: Matrix::glorot(output_dim, input_dim, rng),
            b: Vector::zeros(output_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.0.clone();
        self.w.mul_vec_acc(x, &mut out);
        out
    }

    /// Accumulates `dW += dy ⊗ x`, `db += dy` and `dx += Wᵀ dy`.
    pub(crate) fn backward(&self, x: &[f64], dy: &[f64], grads: &mut DenseParams, dx: Option<&mut [f64]>) {
        grads.w.add_outer(dy, x);
        for (g, d) in grads.b.as_mut_slice().iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            self.w.mul_vec_t_acc(dy, dx);
        }
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &[f64]); 2] {
        [("W", self.w.as_slice()), ("b", self.b.as_slice())]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}
