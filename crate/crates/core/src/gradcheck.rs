//! Central finite differences, used as the reference for analytic gradients.

use crate::cells::{
    backward_sequence, forward_sequence_with, sample_noise, CellKind, NetworkConfig, Noise, RecurrentNetwork,
    ZoneoutConfig,
};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Vector};
use crate::rng::Rng;

/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_gradient<F>(mut f: F, theta: &Vector, h: f64) -> Result<Vector>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = theta.0.clone();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite function value at coordinate {i} ({fp}, {fm})"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(Vector(grad))
}

/// `|a − n| / (|a| + |n| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}


/// Outcome of comparing analytic and finite-difference network gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: String,
    pub num_params: usize,
}

/// Mean frame cross-entropy of `net` on one sequence with fixed noise.
pub fn sequence_loss(net: &RecurrentNetwork, features: &Matrix, targets: &[usize], noise: &Noise) -> Result<f64> {
    let lp = forward_sequence_with(net, features, noise)?;
    let mut loss = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        loss -= lp[(t, target)];
    }
    Ok(loss / targets.len() as f64)
}

/// Compares [`backward_sequence`] against central differences over every
/// parameter. `corrupt` names a tensor whose analytic gradient is perturbed
/// before the comparison (a self-test of the checker).
pub fn check_network_gradients(
    net: &RecurrentNetwork,
    features: &Matrix,
    targets: &[usize],
    noise: &Noise,
    h: f64,
    corrupt: Option<&str>,
) -> Result<GradcheckReport> {
    let (_, grads) = backward_sequence(net, features, targets, noise)?;
    let mut analytic = grads.to_flat();
    let infos = net.params.tensor_infos();
    if let Some(name) = corrupt {
        let info = infos
            .iter()
            .find(|i| i.name == name)
            .ok_or_else(|| Error::Config(format!("no parameter tensor named `{name}`")))?;
        analytic[info.offset] += 1.0;
    }
    let theta = Vector(net.params.to_flat());
    let mut probe = net.clone();
    let mut failure = None;
    let numeric = finite_diff_gradient(
        |t| {
            probe.params.load_flat(t).expect("same shape");
            match sequence_loss(&probe, features, targets, noise) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &theta,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let numeric = numeric?;
    let mut max_rel = 0.0;
    let mut worst = 0;
    for (k, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let r = relative_error(*a, *n);
        if r > max_rel {
            max_rel = r;
            worst = k;
        }
    }
    let info = infos
        .iter()
        .find(|i| worst >= i.offset && worst < i.offset + i.len())
        .expect("index within some tensor");
    Ok(GradcheckReport {
        max_rel_error: max_rel,
        worst: format!("{}[{}]", info.name, worst - info.offset),
        num_params: analytic.len(),
    })
}

/// A small random problem for gradient checking: 2 layers of `hidden`
/// units, `frames` frames, dropout and zoneout masks sampled once and then
/// held fixed. Parameters are redrawn uniformly in (-1, 1) so that every
/// gate operates away from its linear regime.
pub fn random_case(
    kind: CellKind,
    hidden: usize,
    frames: usize,
    seed: u64,
) -> Result<(RecurrentNetwork, Matrix, Vec<usize>, Noise)> {
    let mut rng = Rng::new(seed);
    let feature_dim = 3;
    let num_classes = 4;
    let config = NetworkConfig {
        kind,
        feature_dim,
        context: if kind == CellKind::FeedForward { 3 } else { 1 },
        hidden: vec![hidden, hidden],
        num_classes,
        delay: 1,
        dropout: 0.2,
        zoneout: ZoneoutConfig::new(0.3, 0.4)?,
    };
    let mut net = RecurrentNetwork::new(config, &mut rng)?;
    let flat: Vec<f64> = (0..net.params.num_params()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    net.params.load_flat(&flat)?;
    let features = Matrix::from_vec(
        frames,
        feature_dim,
        (0..frames * feature_dim).map(|_| rng.normal()).collect(),
    )?;
    let targets = (0..frames).map(|_| rng.below(num_classes)).collect();
    let noise = Noise::Fixed(sample_noise(&net, frames, &mut rng));
    Ok((net, features, targets, noise))
}
