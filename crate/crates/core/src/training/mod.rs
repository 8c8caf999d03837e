//! Minibatch training with staged optimizer schedules, best-dev rollback and
//! input normalization.

mod optim;

pub use optim::{adam_update, sgd_momentum_update, OptimizerKind, OptimizerState};

use crate::cells::{accumulate_gradients, forward_sequence_with, sample_noise, CellKind, NetworkConfig, Noise, RecurrentNetwork};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::features::{stack_frames, Normalizer};
use crate::model_io::fmt_f64;
use crate::numeric::{Matrix, Vector};
use crate::regularization::{schedule_p, should_stop, DropoutSchedule, StopState};
use crate::rng::Rng;

/// Size of the corpus the default batch sizes were chosen for.
pub const REFERENCE_TRAIN_UTTERANCES: usize = 3696;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub optimizer: OptimizerKind,
    /// Utterances per batch.
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("stage plan needs at least one stage".into()));
        }
        for (i, s) in stages.iter().enumerate() {
            if s.batch_size == 0 {
                return Err(Error::Config(format!("stage {i}: batch size must be >= 1")));
            }
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("stage {i}: learning rate must be > 0")));
            }
        }
        Ok(Self { stages })
    }

    /// Adam (512, 1e-3), then SGD with batch 128 at 1e-3, 1e-4, 1e-5.
    pub fn recurrent_default() -> Self {
        let sgd = |lr| Stage {
            optimizer: OptimizerKind::SgdMomentum,
            batch_size: 128,
            lr,
        };
        Self {
            stages: vec![
                Stage {
                    optimizer: OptimizerKind::Adam,
                    batch_size: 512,
                    lr: 1e-3,
                },
                sgd(1e-3),
                sgd(1e-4),
                sgd(1e-5),
            ],
        }
    }

    /// SGD from `lr` with three ×0.1 reductions; batch 256, 1024, 2048, 2048.
    pub fn feedforward_default(lr: f64) -> Self {
        let stages = [256, 1024, 2048, 2048]
            .iter()
            .enumerate()
            .map(|(k, &b)| Stage {
                optimizer: OptimizerKind::SgdMomentum,
                batch_size: b,
                lr: lr * 0.1f64.powi(k as i32),
            })
            .collect();
        Self { stages }
    }

    /// Multiplies every batch size by `factor`, rounding, never below 1.
    pub fn scaled(&self, factor: f64) -> Self {
        let stages = self
            .stages
            .iter()
            .map(|s| Stage {
                batch_size: ((s.batch_size as f64 * factor).round() as usize).max(1),
                ..*s
            })
            .collect();
        Self { stages }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub plan: StagePlan,
    pub momentum: f64,
    /// Per-stage epoch cap, on top of the dev-criterion stop.
    pub max_epochs: usize,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub dropout: DropoutSchedule,
    /// Shrink batch sizes by `train utterances / REFERENCE_TRAIN_UTTERANCES`.
    pub scale_batches: bool,
}

impl TrainConfig {
    pub fn recurrent_default() -> Self {
        Self {
            plan: StagePlan::recurrent_default(),
            momentum: 0.9,
            max_epochs: 20,
            clip_norm: Some(5.0),
            dropout: DropoutSchedule::Constant { p: 0.2 },
            scale_batches: true,
        }
    }

    pub fn feedforward_default() -> Self {
        Self {
            plan: StagePlan::feedforward_default(1e-2),
            ..Self::recurrent_default()
        }
    }

    fn effective_plan(&self, n_train: usize) -> StagePlan {
        if self.scale_batches {
            self.plan.scaled(n_train as f64 / REFERENCE_TRAIN_UTTERANCES as f64)
        } else {
            self.plan.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub train_ce: f64,
    pub dev_ce: f64,
    pub p_dropout: f64,
}

impl EpochRecord {
    /// `stage epoch train_ce dev_ce p_dropout`.
    pub fn log_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.stage,
            self.epoch,
            fmt_f64(self.train_ce),
            fmt_f64(self.dev_ce),
            fmt_f64(self.p_dropout)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Dev cross-entropy of the network before any update.
    pub initial_dev_ce: f64,
    pub epochs: Vec<EpochRecord>,
    /// Best dev cross-entropy held at the end of each stage.
    pub stage_best: Vec<f64>,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# stage epoch train_ce dev_ce p_dropout\n");
        for e in &self.epochs {
            s.push_str(&e.log_line());
            s.push('\n');
        }
        s
    }

    pub fn best_dev_ce(&self) -> f64 {
        self.stage_best.last().copied().unwrap_or(self.initial_dev_ce)
    }
}

/// Shuffled groups of whole utterances; the last group may be short.
pub fn make_batches(num_utterances: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..num_utterances).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Normalizer over the stacked inputs the network will see.
pub fn fit_normalizer(config: &NetworkConfig, utts: &[Utterance]) -> Result<Normalizer> {
    let stacked = utts
        .iter()
        .map(|u| stack_frames(&u.features, config.context))
        .collect::<Result<Vec<Matrix>>>()?;
    Normalizer::fit(&stacked)
}

pub fn apply_normalizer(n: &Normalizer, x: &Vector) -> Vector {
    Vector(n.apply(&x.0))
}

/// Mean per-frame cross-entropy in evaluation mode.
pub fn mean_cross_entropy(net: &RecurrentNetwork, utts: &[Utterance]) -> Result<f64> {
    let (mut total, mut frames) = (0.0, 0usize);
    for u in utts {
        let lp = forward_sequence_with(net, &u.features, &Noise::Eval)?;
        for (t, &l) in u.labels.iter().enumerate() {
            total -= lp[(t, l)];
        }
        frames += u.frames();
    }
    if frames == 0 {
        return Err(Error::Data("no frames to evaluate".into()));
    }
    Ok(total / frames as f64)
}

/// Runs the staged plan with best-dev rollback. Recurrent nets only.
pub fn train_recurrent(
    net: RecurrentNetwork,
    train: &[Utterance],
    dev: &[Utterance],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(RecurrentNetwork, TrainLog)> {
    if !net.kind().is_recurrent() {
        return Err(Error::Config(format!("train_recurrent on a {} network", net.kind())));
    }
    train_staged(net, train, dev, cfg, rng, &mut |_| {})
}

/// SGD schedule of decreasing learning rate and growing batches, each step
/// taken when the dev criterion rises. Feed-forward nets only.
pub fn train_feedforward(
    net: RecurrentNetwork,
    train: &[Utterance],
    dev: &[Utterance],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(RecurrentNetwork, TrainLog)> {
    if net.kind() != CellKind::FeedForward {
        return Err(Error::Config(format!("train_feedforward on a {} network", net.kind())));
    }
    train_staged(net, train, dev, cfg, rng, &mut |_| {})
}

/// Shared stage loop. Fits the input normalizer on `train`, then for each
/// stage trains epochs until the dev criterion rises (or the epoch cap),
/// and resumes the next stage from the best dev parameters seen so far.
/// `observer` sees every epoch as it finishes.
pub fn train_staged(
    mut net: RecurrentNetwork,
    train: &[Utterance],
    dev: &[Utterance],
    cfg: &TrainConfig,
    rng: &mut Rng,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(RecurrentNetwork, TrainLog)> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("training needs nonempty train and dev sets".into()));
    }
    if cfg.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be >= 1".into()));
    }
    let plan = cfg.effective_plan(train.len());
    StagePlan::new(plan.stages.clone())?;
    net.normalizer = fit_normalizer(&net.config, train)?;

    let initial_dev_ce = mean_cross_entropy(&net, dev)?;
    if !initial_dev_ce.is_finite() {
        return Err(Error::Diverged {
            context: "initial dev evaluation".into(),
        });
    }
    let mut best = (initial_dev_ce, net.params.clone());
    let mut log = TrainLog {
        initial_dev_ce,
        epochs: Vec::new(),
        stage_best: Vec::new(),
    };
    let mut global_epoch = 0usize;

    for (si, stage) in plan.stages.iter().enumerate() {
        net.params = best.1.clone();
        let n = net.params.num_params();
        let mut opt = match stage.optimizer {
            OptimizerKind::Adam => OptimizerState::adam(n, stage.lr)?,
            OptimizerKind::SgdMomentum => OptimizerState::sgd(n, stage.lr, cfg.momentum)?,
        };
        let mut stop = StopState {
            previous: Some(best.0),
        };
        for epoch in 0..cfg.max_epochs {
            let context = || format!("stage {si} epoch {epoch}");
            let p = schedule_p(&cfg.dropout, global_epoch)?;
            net.config.dropout = p;
            let mut erng = rng.fork(global_epoch as u64);
            global_epoch += 1;

            let train_ce = run_epoch(&mut net, train, stage.batch_size, cfg.clip_norm, &mut opt, &mut erng)
                .map_err(|e| match e {
                    Error::Diverged { .. } => Error::Diverged { context: context() },
                    other => other,
                })?;
            let dev_ce = mean_cross_entropy(&net, dev)?;
            if !dev_ce.is_finite() {
                return Err(Error::Diverged { context: context() });
            }
            let record = EpochRecord {
                stage: si,
                epoch,
                train_ce,
                dev_ce,
                p_dropout: p,
            };
            observer(&record);
            log.epochs.push(record);
            if dev_ce < best.0 {
                best = (dev_ce, net.params.clone());
            }
            let (next, fire) = should_stop(stop, dev_ce)?;
            stop = next;
            if fire {
                break;
            }
        }
        log.stage_best.push(best.0);
    }
    net.params = best.1;
    Ok((net, log))
}

/// One pass over `train` in shuffled batches; returns the mean frame loss.
fn run_epoch(
    net: &mut RecurrentNetwork,
    train: &[Utterance],
    batch_size: usize,
    clip_norm: Option<f64>,
    opt: &mut OptimizerState,
    rng: &mut Rng,
) -> Result<f64> {
    let batches = make_batches(train.len(), batch_size, &mut rng.fork(0))?;
    let mut noise_rng = rng.fork(1);
    let (mut total, mut frames) = (0.0, 0usize);
    for batch in batches {
        let mut grads = net.params.zeros_like();
        let mut batch_loss = 0.0;
        let mut batch_frames = 0usize;
        for &i in &batch {
            let u = &train[i];
            let noise = Noise::Fixed(sample_noise(net, u.frames(), &mut noise_rng));
            batch_loss += accumulate_gradients(net, &u.features, &u.labels, &noise, &mut grads)?;
            batch_frames += u.frames();
        }
        if !batch_loss.is_finite() {
            return Err(Error::Diverged {
                context: String::new(),
            });
        }
        grads.scale(1.0 / batch_frames as f64);
        if let Some(max) = clip_norm {
            let norm = grads.sq_norm().sqrt();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        let mut flat = net.params.to_flat();
        opt.update(&mut flat, &grads.to_flat())?;
        net.params.load_flat(&flat)?;
        total += batch_loss;
        frames += batch_frames;
    }
    Ok(total / frames as f64)
}
