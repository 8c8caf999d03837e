use crate::error::{Error, Result};
use crate::numeric::{sigmoid_scalar, Matrix, Vector};
use crate::rng::Rng;

/// GRU parameters.
///
/// ```text
/// r = σ(W_r x + U_r h + b_r)        z = σ(W_z x + U_z h + b_z)
/// ĥ = tanh(W x + U (r ∗ h) + b_h)   h' = (1 − z) ∗ h + z ∗ ĥ
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_r: Matrix,
    pub w_z: Matrix,
    pub w: Matrix,
    pub u_r: Matrix,
    pub u_z: Matrix,
    pub u: Matrix,
    pub b_r: Vector,
    pub b_z: Vector,
    pub b_h: Vector,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_r: Matrix::zeros(hidden_dim, input_dim),
            w_z: Matrix::zeros(hidden_dim, input_dim),
            w: Matrix::zeros(hidden_dim, input_dim),
            u_r: Matrix::zeros(hidden_dim, hidden_dim),
            u_z: Matrix::zeros(hidden_dim, hidden_dim),
            u: Matrix::zeros(hidden_dim, hidden_dim),
            b_r: Vector::zeros(hidden_dim),
            b_z: Vector::zeros(hidden_dim),
            b_h: Vector::zeros(hidden_dim),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let w_r = Matrix::glorot(hidden_dim, input_dim, rng);
        let w_z = Matrix::glorot(hidden_dim, input_dim, rng);
        let w = Matrix::glorot(hidden_dim, input_dim, rng);
        let u_r = Matrix::glorot(hidden_dim, hidden_dim, rng);
        let u_z = Matrix::glorot(hidden_dim, hidden_dim, rng);
        let u = Matrix::glorot(hidden_dim, hidden_dim, rng);
        Self {
            w_r,
            w_z,
            w,
            u_r,
            u_z,
            u,
            b_r: Vector::zeros(hidden_dim),
            b_z: Vector::zeros(hidden_dim),
            b_h: Vector::zeros(hidden_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &[f64]); 9] {
        [
            ("W_r", self.w_r.as_slice()),
            ("W_z", self.w_z.as_slice()),
            ("W", self.w.as_slice()),
            ("U_r", self.u_r.as_slice()),
            ("U_z", self.u_z.as_slice()),
            ("U", self.u.as_slice()),
            ("b_r", self.b_r.as_slice()),
            ("b_z", self.b_z.as_slice()),
            ("b_h", self.b_h.as_slice()),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_r.as_mut_slice(),
            self.w_z.as_mut_slice(),
            self.w.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u.as_mut_slice(),
            self.b_r.as_mut_slice(),
            self.b_z.as_mut_slice(),
            self.b_h.as_mut_slice(),
        ]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    cand: Vec<f64>,
    reset_h: Vec<f64>,
}

pub(crate) fn forward_step(p: &GruParams, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruCache) {
    let gate = |w: &Matrix, u: &Matrix, b: &Vector| -> Vec<f64> {
        let mut a = b.0.clone();
        w.mul_vec_acc(x, &mut a);
        u.mul_vec_acc(h_prev, &mut a);
        a.into_iter().map(sigmoid_scalar).collect()
    };
    let r = gate(&p.w_r, &p.u_r, &p.b_r);
    let z = gate(&p.w_z, &p.u_z, &p.b_z);
    let reset_h: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let mut a = p.b_h.0.clone();
    p.w.mul_vec_acc(x, &mut a);
    p.u.mul_vec_acc(&reset_h, &mut a);
    let cand: Vec<f64> = a.into_iter().map(f64::tanh).collect();
    let h = (0..cand.len())
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * cand[k])
        .collect();
    let cache = GruCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        r,
        z,
        cand,
        reset_h,
    };
    (h, cache)
}

pub(crate) fn backward_step(
    p: &GruParams,
    cache: &GruCache,
    dh: &[f64],
    grads: &mut GruParams,
    dx: &mut [f64],
) -> Vec<f64> {
    let n = dh.len();
    let mut dh_prev: Vec<f64> = (0..n).map(|k| dh[k] * (1.0 - cache.z[k])).collect();
    let da_z: Vec<f64> = (0..n)
        .map(|k| {
            let z = cache.z[k];
            dh[k] * (cache.cand[k] - cache.h_prev[k]) * z * (1.0 - z)
        })
        .collect();
    let da_n: Vec<f64> = (0..n)
        .map(|k| dh[k] * cache.z[k] * (1.0 - cache.cand[k] * cache.cand[k]))
        .collect();

    let mut d_reset_h = vec![0.0; n];
    p.u.mul_vec_t_acc(&da_n, &mut d_reset_h);
    let mut da_r = vec![0.0; n];
    for k in 0..n {
        dh_prev[k] += d_reset_h[k] * cache.r[k];
        let r = cache.r[k];
        da_r[k] = d_reset_h[k] * cache.h_prev[k] * r * (1.0 - r);
    }

    p.w.mul_vec_t_acc(&da_n, dx);
    p.w_r.mul_vec_t_acc(&da_r, dx);
    p.w_z.mul_vec_t_acc(&da_z, dx);
    p.u_r.mul_vec_t_acc(&da_r, &mut dh_prev);
    p.u_z.mul_vec_t_acc(&da_z, &mut dh_prev);

    grads.w.add_outer(&da_n, &cache.x);
    grads.u.add_outer(&da_n, &cache.reset_h);
    grads.w_r.add_outer(&da_r, &cache.x);
    grads.u_r.add_outer(&da_r, &cache.h_prev);
    grads.w_z.add_outer(&da_z, &cache.x);
    grads.u_z.add_outer(&da_z, &cache.h_prev);
    for k in 0..n {
        grads.b_h[k] += da_n[k];
        grads.b_r[k] += da_r[k];
        grads.b_z[k] += da_z[k];
    }
    dh_prev
}

pub fn gru_step(p: &GruParams, x: &Vector, h_prev: &Vector) -> Result<Vector> {
    if x.dim() != p.input_dim() {
        return Err(Error::shape("gru_step", format!("input {}", p.input_dim()), format!("x {}", x.dim())));
    }
    if h_prev.dim() != p.hidden_dim() {
        return Err(Error::shape(
            "gru_step",
            format!("hidden {}", p.hidden_dim()),
            format!("h {}", h_prev.dim()),
        ));
    }
    Ok(Vector(forward_step(p, &x.0, &h_prev.0).0))
}
