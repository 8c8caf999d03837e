//! Dense 64-bit linear algebra, activations and losses.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_range(-s, s)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x` without shape checking beyond debug asserts.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `out += self * x`.
    pub fn mul_vec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `out += selfᵀ * y`.
    pub fn mul_vec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
    }

    /// `self += a ⊗ b`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            for (w, bv) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *w += ar * bv;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `W x + b`.
pub fn affine(w: &Matrix, x: &Vector, b: &Vector) -> Result<Vector> {
    if w.cols() != x.dim() {
        return Err(Error::shape("affine", format!("W {w}"), format!("x {}", x.dim())));
    }
    if w.rows() != b.dim() {
        return Err(Error::shape("affine", format!("W {w}"), format!("b {}", b.dim())));
    }
    let mut out = b.0.clone();
    w.mul_vec_acc(&x.0, &mut out);
    Ok(Vector(out))
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu_scalar(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub fn sigmoid(x: &Vector) -> Vector {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Vector) -> Vector {
    x.map(f64::tanh)
}

pub fn relu(x: &Vector) -> Vector {
    x.map(relu_scalar)
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `x - max(x) - log Σ exp(x - max(x))`.
pub fn log_softmax(x: &Vector) -> Vector {
    let m = x.max();
    let lse = x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.map(|v| v - m - lse)
}

pub fn softmax(x: &Vector) -> Vector {
    let m = x.max();
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Vector(exps.into_iter().map(|e| e / z).collect())
}

pub fn cross_entropy(log_probs: &Vector, target: usize) -> Result<f64> {
    if target >= log_probs.dim() {
        return Err(Error::Index {
            index: target,
            len: log_probs.dim(),
        });
    }
    Ok(-log_probs[target])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector(x.to_vec())
    }

    #[test]
    fn affine_examples() {
        let out = affine(&Matrix::identity(2), &v(&[3.0, 4.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(out, v(&[3.0, 4.0]));
        let out = affine(&Matrix::zeros(2, 2), &v(&[3.0, 4.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!(out, v(&[1.0, 2.0]));
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = affine(&w, &v(&[1.0, 1.0]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(out, v(&[3.0, 8.0]));
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let err = affine(&Matrix::zeros(2, 3), &v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("x 2"), "{msg}");
        assert!(affine(&Matrix::zeros(2, 2), &v(&[1.0, 2.0]), &v(&[0.0])).is_err());
    }

    #[test]
    fn activations_at_simple_points() {
        assert_eq!(sigmoid(&v(&[0.0]))[0], 0.5);
        assert_eq!(tanh(&v(&[0.0]))[0], 0.0);
        assert_eq!(relu(&v(&[-1.5, 2.5])), v(&[0.0, 2.5]));
        let s = sigmoid(&v(&[-800.0, 800.0]));
        assert!(s.is_finite());
        assert_eq!(s[1], 1.0);
    }

    #[test]
    fn softmax_examples() {
        for c in [-5.0, 0.0, 123.0] {
            let s = softmax(&v(&[c, c, c]));
            for p in s.iter() {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let l = log_softmax(&v(&[0.0, 0.0]));
        assert!((l[0] + 2f64.ln()).abs() < 1e-15);
        assert!((l[1] + 2f64.ln()).abs() < 1e-15);
        // exp(-1000) underflows to 0 in f64; true value is 1 - 5e-435
        let s = softmax(&v(&[1000.0, 0.0]));
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
        let l = log_softmax(&v(&[1000.0, 0.0]));
        assert_eq!(l[0], 0.0);
        assert_eq!(l[1], -1000.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let l = log_softmax(&v(&[0.0, 0.0]));
        assert!((cross_entropy(&l, 0).unwrap() - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert_eq!(cross_entropy(&v(&[0.0, f64::NEG_INFINITY]), 0).unwrap(), 0.0);
        assert!(matches!(cross_entropy(&l, 2), Err(Error::Index { index: 2, len: 2 })));
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let mut rng = Rng::new(5);
        let x = Vector((0..5).map(|_| rng.normal() * 3.0).collect());
        let t = 3;
        let direct = -(x[t].exp() / x.iter().map(|v| v.exp()).sum::<f64>()).ln();
        let ce = cross_entropy(&log_softmax(&x), t).unwrap();
        assert!((ce - direct).abs() < 1e-12);
    }

    #[test]
    fn transposed_product_and_outer() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let mut out = vec![0.0; 3];
        w.mul_vec_t_acc(&[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-3.0, -3.0, -3.0]);
        let mut m = Matrix::zeros(2, 3);
        m.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(m.as_slice(), &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
    }
}
