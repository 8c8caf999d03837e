use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (expected sgd or adam)"))),
        }
    }
}

/// Optimizer hyper-parameters plus its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// SGD velocity, or Adam first moment.
    pub first: Vec<f64>,
    /// Adam second moment; empty for SGD.
    pub second: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn sgd(num_params: usize, lr: f64, momentum: f64) -> Result<Self> {
        check_lr(lr)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            kind: OptimizerKind::SgdMomentum,
            lr,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: vec![0.0; num_params],
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn adam(num_params: usize, lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            step: 0,
        })
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.kind {
            OptimizerKind::SgdMomentum => sgd_momentum_update(params, grads, self),
            OptimizerKind::Adam => adam_update(params, grads, self),
        }
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("learning rate must be > 0, got {lr}")))
    }
}

fn check_shapes(params: &[f64], grads: &[f64], state: &[f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape(
            "optimizer update",
            format!("{} params", params.len()),
            format!("{} grads, {} state", grads.len(), state.len()),
        ));
    }
    Ok(())
}

/// `v ← μ v − lr g;  θ ← θ + v`.
pub fn sgd_momentum_update(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    check_shapes(params, grads, &state.first)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.first) {
        *v = state.momentum * *v - state.lr * g;
        *p += *v;
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    check_shapes(params, grads, &state.first)?;
    check_shapes(params, grads, &state.second)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sgd_hand_cases() {
        let mut s = OptimizerState::sgd(1, 0.1, 0.9).unwrap();
        let mut p = [0.0];
        sgd_momentum_update(&mut p, &[0.0], &mut s).unwrap();
        assert_eq!(p, [0.0]);

        sgd_momentum_update(&mut p, &[1.0], &mut s).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        sgd_momentum_update(&mut p, &[1.0], &mut s).unwrap();
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_has_size_lr() {
        let mut s = OptimizerState::adam(3, 0.01).unwrap();
        let mut p = [1.0, 1.0, 1.0];
        adam_update(&mut p, &[0.5, -3.0, 0.0], &mut s).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 0.01)).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn shape_mismatch_and_bad_settings() {
        let mut s = OptimizerState::sgd(2, 0.1, 0.9).unwrap();
        assert!(matches!(sgd_momentum_update(&mut [0.0; 3], &[0.0; 3], &mut s), Err(Error::Shape { .. })));
        let mut a = OptimizerState::adam(2, 0.1).unwrap();
        assert!(adam_update(&mut [0.0; 2], &[0.0; 1], &mut a).is_err());
        assert!(OptimizerState::sgd(1, 0.0, 0.9).is_err());
        assert!(OptimizerState::adam(1, -1.0).is_err());
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }

    proptest! {
        #[test]
        fn zero_momentum_is_plain_descent(
            p in prop::collection::vec(-5.0f64..5.0, 1..6),
            lr in 1e-4f64..1.0,
            steps in 1usize..5,
        ) {
            let mut s = OptimizerState::sgd(p.len(), lr, 0.0).unwrap();
            let mut a = p.clone();
            let mut b = p.clone();
            for k in 0..steps {
                let g: Vec<f64> = b.iter().map(|v| v.sin() + k as f64).collect();
                sgd_momentum_update(&mut a, &g, &mut s).unwrap();
                b.iter_mut().zip(&g).for_each(|(x, gi)| *x += -lr * gi);
            }
            prop_assert_eq!(a, b);
        }

        #[test]
        fn adam_step_opposes_gradient(g in prop::collection::vec(-10.0f64..10.0, 1..6)) {
            let mut s = OptimizerState::adam(g.len(), 1e-3).unwrap();
            let mut p = vec![0.0; g.len()];
            adam_update(&mut p, &g, &mut s).unwrap();
            for (pi, gi) in p.iter().zip(&g) {
                prop_assert!(pi * gi <= 0.0);
            }
        }

        #[test]
        fn updates_are_deterministic(g in prop::collection::vec(-1.0f64..1.0, 1..6)) {
            let mut s1 = OptimizerState::adam(g.len(), 1e-2).unwrap();
            let mut s2 = s1.clone();
            let (mut a, mut b) = (vec![0.3; g.len()], vec![0.3; g.len()]);
            for _ in 0..3 {
                s1.update(&mut a, &g).unwrap();
                s2.update(&mut b, &g).unwrap();
            }
            prop_assert_eq!(a, b);
            prop_assert_eq!(s1, s2);
        }
    }
}
