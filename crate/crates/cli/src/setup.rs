//! Core configuration objects built from the flat settings.

use nnam_core::cells::{CellKind, NetworkConfig, ZoneoutConfig};
use nnam_core::corpus::SynthSpec;
use nnam_core::decoder::DecodeOptions;
use nnam_core::ensemble::{Members, RplConfig, Scenario};
use nnam_core::regularization::DropoutSchedule;
use nnam_core::rng::Rng;
use nnam_core::training::{OptimizerKind, Stage, StagePlan, TrainConfig};

use crate::config::{Config, UsageError};

/// Keys of the independent random streams hanging off the root seed.
pub mod stream {
    pub const SYNTH: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const CROGGING: u64 = 5;
    pub const RPL: u64 = 6;
    pub const RUNS: u64 = 7;
    pub const DEV: u64 = 8;
}

pub fn root_rng(cfg: &Config) -> Rng {
    Rng::new(cfg.seed("seed"))
}

/// Root of the training streams: `train.seed` if set, else `seed`.
pub fn train_rng(cfg: &Config) -> Result<Rng, UsageError> {
    match cfg.str("train.seed") {
        "auto" => Ok(root_rng(cfg)),
        s => s
            .parse()
            .map(Rng::new)
            .map_err(|_| UsageError(format!("`train.seed`: expected auto or an integer, got `{s}`"))),
    }
}

pub fn synth_spec(cfg: &Config) -> SynthSpec {
    SynthSpec {
        phones: cfg.count("synth.phones"),
        states: cfg.count("synth.states"),
        feature_dim: cfg.count("synth.feature_dim"),
        train: cfg.count("synth.train"),
        dev: cfg.count("synth.dev"),
        test: cfg.count("synth.test"),
        min_frames: cfg.count("synth.min_frames"),
        max_frames: cfg.count("synth.max_frames"),
        noise: cfg.real("synth.noise"),
        self_loop: cfg.real("synth.self_loop"),
    }
}

pub fn cell_kind(cfg: &Config) -> CellKind {
    cfg.str("net.cell").parse().expect("checked on set")
}

pub fn network_config(cfg: &Config, feature_dim: usize, num_classes: usize) -> Result<NetworkConfig, UsageError> {
    let kind = cell_kind(cfg);
    let hidden = cfg.sizes("net.hidden").unwrap_or_else(|| {
        if kind == CellKind::FeedForward {
            vec![2048; 8]
        } else {
            vec![512; 4]
        }
    });
    let zoneout = ZoneoutConfig::new(cfg.real("net.zoneout_c"), cfg.real("net.zoneout_h")).map_err(bad)?;
    let dropout = match cfg.str("dropout.kind") {
        "constant" => cfg.real("dropout.p"),
        _ => 0.0,
    };
    let net = NetworkConfig {
        kind,
        feature_dim,
        context: cfg.count("train.context"),
        hidden,
        num_classes,
        delay: cfg.count("train.delay"),
        dropout,
        zoneout,
    };
    net.validate().map_err(bad)?;
    Ok(net)
}

fn bad(e: nnam_core::Error) -> UsageError {
    UsageError(e.to_string())
}

fn parse_stages(s: &str) -> Result<StagePlan, UsageError> {
    let stages = s
        .split(',')
        .map(|part| {
            let f: Vec<&str> = part.trim().split(':').collect();
            let err = || UsageError(format!("`train.stages`: bad stage `{part}`, expected opt:batch:lr"));
            if f.len() != 3 {
                return Err(err());
            }
            Ok(Stage {
                optimizer: f[0].parse::<OptimizerKind>().map_err(bad)?,
                batch_size: f[1].parse().map_err(|_| err())?,
                lr: f[2].parse().map_err(|_| err())?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    StagePlan::new(stages).map_err(bad)
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig, UsageError> {
    let ff = cell_kind(cfg) == CellKind::FeedForward;
    let lr = cfg.real("train.lr");
    let mut plan = match cfg.str("train.stages") {
        "auto" if ff => StagePlan::feedforward_default(if lr > 0.0 { lr } else { 1e-2 }),
        "auto" => StagePlan::recurrent_default(),
        s => parse_stages(s)?,
    };
    if lr > 0.0 && !(ff && cfg.str("train.stages") == "auto") {
        plan.stages[0].lr = lr;
    }
    let batch = cfg.count("train.batch");
    if batch > 0 {
        plan.stages.iter_mut().for_each(|s| s.batch_size = batch);
    }
    let dropout = match cfg.str("dropout.kind") {
        "constant" => DropoutSchedule::constant(cfg.real("dropout.p")),
        _ => DropoutSchedule::dynamic(cfg.real("dropout.peak"), cfg.count("dropout.total_epochs")),
    }
    .map_err(bad)?;
    let momentum = cfg.real("train.momentum");
    if !(0.0..1.0).contains(&momentum) {
        return Err(UsageError(format!("`train.momentum` must be in [0, 1), got {momentum}")));
    }
    let clip = cfg.real("train.clip_norm");
    Ok(TrainConfig {
        plan,
        momentum,
        max_epochs: cfg.count("train.max_epochs"),
        clip_norm: (clip > 0.0).then_some(clip),
        dropout,
        scale_batches: cfg.flag("train.scale_batches"),
    })
}

pub fn rpl_config(cfg: &Config) -> RplConfig {
    RplConfig {
        lr: cfg.real("rpl.lr"),
        max_iters: cfg.count("rpl.max_iters"),
        held_aside: cfg.real("rpl.held_aside"),
    }
}

pub fn decode_options(cfg: &Config) -> DecodeOptions {
    DecodeOptions {
        lm_weight: cfg.real("decode.lm_weight"),
        acoustic_scale: cfg.real("decode.acoustic_scale"),
        use_priors: cfg.flag("decode.use_priors"),
    }
}

pub fn scenario(cfg: &Config) -> Scenario {
    let members: Members = cfg.str("decode.scenario").parse().expect("checked on set");
    Scenario::from_parts(members, cfg.flag("decode.rpl"))
}
