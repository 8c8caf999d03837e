//! Dropout, the per-epoch dropout schedule, and criterion-based stopping.

use crate::cells::Mode;
use crate::error::{Error, Result};
use crate::numeric::Vector;
use crate::rng::Rng;

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0,1), got {p}")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.bernoulli(p) { 0.0 } else { keep }).collect()
}

pub fn dropout_apply(x: &Vector, p: f64, mode: Mode, rng: &mut Rng) -> Result<Vector> {
    check_p(p)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.dim(), p, rng);
    Ok(Vector(x.iter().zip(mask).map(|(v, m)| v * m).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutSchedule {
    Constant { p: f64 },
    /// Zero for the first 20% of epochs, linear up to `peak` at the middle
    /// epoch, linear back down to zero at the last epoch.
    Dynamic { peak: f64, total_epochs: usize },
}

impl DropoutSchedule {
    pub fn constant(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(DropoutSchedule::Constant { p })
    }

    pub fn dynamic(peak: f64, total_epochs: usize) -> Result<Self> {
        check_p(peak)?;
        if total_epochs == 0 {
            return Err(Error::Config("dynamic dropout schedule needs total_epochs >= 1".into()));
        }
        Ok(DropoutSchedule::Dynamic { peak, total_epochs })
    }

    pub fn total_epochs(&self) -> Option<usize> {
        match self {
            DropoutSchedule::Constant { .. } => None,
            DropoutSchedule::Dynamic { total_epochs, .. } => Some(*total_epochs),
        }
    }
}

pub fn schedule_p(s: &DropoutSchedule, epoch: usize) -> Result<f64> {
    match *s {
        DropoutSchedule::Constant { p } => Ok(p),
        DropoutSchedule::Dynamic { peak, total_epochs } => {
            if epoch >= total_epochs {
                return Err(Error::Index {
                    index: epoch,
                    len: total_epochs,
                });
            }
            // first epoch not inside the leading 20%
            let ramp_start = total_epochs.div_ceil(5);
            let mid = total_epochs / 2;
            let last = total_epochs - 1;
            let p = if epoch < ramp_start || epoch == last {
                0.0
            } else if epoch <= mid {
                if mid == ramp_start {
                    peak
                } else {
                    peak * (epoch - ramp_start) as f64 / (mid - ramp_start) as f64
                }
            } else {
                peak * (last - epoch) as f64 / (last - mid) as f64
            };
            Ok(p)
        }
    }
}

/// Dev criterion of the previous epoch, if any.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StopState {
    pub previous: Option<f64>,
}

/// Fires iff a previous criterion exists and `criterion` is strictly larger.
pub fn should_stop(state: StopState, criterion: f64) -> Result<(StopState, bool)> {
    if !criterion.is_finite() {
        return Err(Error::Diverged {
            context: format!("dev criterion {criterion}"),
        });
    }
    let stop = state.previous.is_some_and(|prev| criterion > prev);
    Ok((
        StopState {
            previous: Some(criterion),
        },
        stop,
    ))
}
