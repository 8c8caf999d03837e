//! Crogging ensembles: k-fold member training with held-out predictions,
//! posterior aggregation with an optional master network, and the
//! regularization post-layer (RPL) trained on held-out predictions.

mod manifest;
mod rpl;

use std::fmt;
use std::str::FromStr;

pub use manifest::{load_ensemble, save_ensemble, Manifest};
pub use rpl::{apply_rpl, fit_rpl, load_rpl, rpl_to_string, save_rpl, train_rpl, RplConfig, RplFit, RplParams};

use crate::cells::{forward_sequence_with, NetworkConfig, Noise, RecurrentNetwork};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Vector};
use crate::rng::Rng;
use crate::training::{train_staged, EpochRecord, TrainConfig, TrainLog};

/// Balanced assignment of utterances to `k` folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub k: usize,
    pub ids: Vec<String>,
    /// `fold[i]` is the fold of `ids[i]`.
    pub fold: Vec<usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id).map(|i| self.fold[i])
    }

    /// Positions (into `ids`) of the members of fold `j`.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.fold[i] == j).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.fold.iter().for_each(|&f| s[f] += 1);
        s
    }
}

/// Seeded balanced partition: a shuffled order dealt round-robin, so fold
/// sizes differ by at most one.
pub fn split_folds(ids: &[String], k: usize, rng: &mut Rng) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Config(format!("{k} folds but only {} utterances", ids.len())));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    rng.shuffle(&mut order);
    let mut fold = vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(FoldSplit {
        k,
        ids: ids.to_vec(),
        fold,
    })
}

/// Fold members and their held-out predictions.
#[derive(Debug, Clone)]
pub struct Crogging {
    pub nets: Vec<RecurrentNetwork>,
    pub logs: Vec<TrainLog>,
    /// Eval-mode log-posteriors of each training utterance from the fold net
    /// that did not see it, aligned with the training slice.
    pub held_out: Vec<Matrix>,
    /// Which fold net produced `held_out[i]`.
    pub held_out_by: Vec<usize>,
}

/// Trains one net per fold on the other folds, using the held-out fold as its
/// dev set, and records that net's predictions on the held-out fold.
pub fn train_crogging(
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    train: &[Utterance],
    split: &FoldSplit,
    rng: &mut Rng,
    observer: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<Crogging> {
    if split.ids.len() != train.len() || split.ids.iter().zip(train).any(|(a, u)| *a != u.id) {
        return Err(Error::Config("fold split does not match the training utterances".into()));
    }
    let mut out = Crogging {
        nets: Vec::with_capacity(split.k),
        logs: Vec::with_capacity(split.k),
        held_out: vec![Matrix::zeros(0, 0); train.len()],
        held_out_by: vec![usize::MAX; train.len()],
    };
    for j in 0..split.k {
        let mut fold_rng = rng.fork(j as u64);
        let (mut fit, mut dev) = (Vec::new(), Vec::new());
        for (u, &f) in train.iter().zip(&split.fold) {
            if f == j {
                dev.push(u.clone());
            } else {
                fit.push(u.clone());
            }
        }
        let net = RecurrentNetwork::new(net_cfg.clone(), &mut fold_rng.split())?;
        let (net, log) = train_staged(net, &fit, &dev, train_cfg, &mut fold_rng.split(), &mut |e| observer(j, e))
            .map_err(|e| match e {
                Error::Diverged { context } => Error::Diverged {
                    context: format!("fold {j}, {context}"),
                },
                other => other,
            })?;
        for i in split.members(j) {
            out.held_out[i] = forward_sequence_with(&net, &train[i].features, &Noise::Eval)?;
            out.held_out_by[i] = j;
        }
        out.nets.push(net);
        out.logs.push(log);
    }
    Ok(out)
}

/// Which ensemble members feed an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Members {
    Master,
    Folds,
    MasterFolds,
}

/// The six evaluated combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Master,
    MasterRpl,
    Folds,
    FoldsRpl,
    MasterFolds,
    MasterFoldsRpl,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Master,
        Scenario::MasterRpl,
        Scenario::Folds,
        Scenario::FoldsRpl,
        Scenario::MasterFolds,
        Scenario::MasterFoldsRpl,
    ];

    pub fn members(self) -> Members {
        match self {
            Scenario::Master | Scenario::MasterRpl => Members::Master,
            Scenario::Folds | Scenario::FoldsRpl => Members::Folds,
            Scenario::MasterFolds | Scenario::MasterFoldsRpl => Members::MasterFolds,
        }
    }

    pub fn uses_rpl(self) -> bool {
        matches!(self, Scenario::MasterRpl | Scenario::FoldsRpl | Scenario::MasterFoldsRpl)
    }

    pub fn from_parts(members: Members, rpl: bool) -> Self {
        match (members, rpl) {
            (Members::Master, false) => Scenario::Master,
            (Members::Master, true) => Scenario::MasterRpl,
            (Members::Folds, false) => Scenario::Folds,
            (Members::Folds, true) => Scenario::FoldsRpl,
            (Members::MasterFolds, false) => Scenario::MasterFolds,
            (Members::MasterFolds, true) => Scenario::MasterFoldsRpl,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Master => "master",
            Scenario::MasterRpl => "master+rpl",
            Scenario::Folds => "folds",
            Scenario::FoldsRpl => "folds+rpl",
            Scenario::MasterFolds => "master+folds",
            Scenario::MasterFoldsRpl => "master+folds+rpl",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Members {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "master" => Ok(Members::Master),
            "folds" => Ok(Members::Folds),
            "master+folds" => Ok(Members::MasterFolds),
            _ => Err(Error::Config(format!("unknown scenario `{s}` (expected master, folds or master+folds)"))),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

/// Master network, fold networks and an optional RPL.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub master: Option<RecurrentNetwork>,
    pub folds: Vec<RecurrentNetwork>,
    pub rpl: Option<RplParams>,
    pub master_weight: f64,
}

impl Ensemble {
    pub fn new(
        master: Option<RecurrentNetwork>,
        folds: Vec<RecurrentNetwork>,
        rpl: Option<RplParams>,
        master_weight: f64,
    ) -> Result<Self> {
        if master.is_none() && folds.is_empty() {
            return Err(Error::Config("ensemble needs a master or at least one fold".into()));
        }
        if !(0.0..=1.0).contains(&master_weight) {
            return Err(Error::Config(format!("master_weight must be in [0, 1], got {master_weight}")));
        }
        let first = master.as_ref().or(folds.first()).expect("checked above");
        let (c, d) = (first.num_classes(), first.config.feature_dim);
        for n in master.iter().chain(&folds) {
            if n.num_classes() != c || n.config.feature_dim != d {
                return Err(Error::Config("ensemble members disagree on classes or feature dim".into()));
            }
        }
        if let Some(r) = &rpl {
            if r.num_classes() != c {
                return Err(Error::shape("ensemble rpl", c, r.num_classes()));
            }
        }
        Ok(Self {
            master,
            folds,
            rpl,
            master_weight,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.master.as_ref().or(self.folds.first()).map_or(0, |n| n.num_classes())
    }

    /// Eval-mode member log-posteriors for one utterance.
    pub fn member_outputs(&self, features: &Matrix) -> Result<MemberOutputs> {
        Ok(MemberOutputs {
            master: self
                .master
                .as_ref()
                .map(|n| forward_sequence_with(n, features, &Noise::Eval))
                .transpose()?,
            folds: self
                .folds
                .iter()
                .map(|n| forward_sequence_with(n, features, &Noise::Eval))
                .collect::<Result<_>>()?,
        })
    }

    /// Frame posteriors (probabilities) of `scenario` for one utterance.
    pub fn scenario_posteriors(&self, scenario: Scenario, outputs: &MemberOutputs) -> Result<Matrix> {
        let rpl = if scenario.uses_rpl() {
            Some(
                self.rpl
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("scenario {scenario} needs an RPL")))?,
            )
        } else {
            None
        };
        let agg = aggregate_sequence(scenario.members(), outputs, self.master_weight)?;
        match rpl {
            None => Ok(agg),
            Some(r) => {
                let mut out = agg.clone();
                let c = agg.cols();
                for t in 0..agg.rows() {
                    let p = apply_rpl(r, &Vector(agg.row(t).to_vec()))?;
                    out.as_mut_slice()[t * c..(t + 1) * c].copy_from_slice(p.as_slice());
                }
                Ok(out)
            }
        }
    }
}

/// Member log-posteriors for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberOutputs {
    pub master: Option<Matrix>,
    pub folds: Vec<Matrix>,
}

/// One frame: mean of fold posteriors, master posterior, or their
/// `master_weight`-weighted mix. Inputs are log-posteriors; output is a
/// probability vector.
pub fn aggregate(members: Members, master: Option<&[f64]>, folds: &[&[f64]], master_weight: f64) -> Result<Vector> {
    let need_master = matches!(members, Members::Master | Members::MasterFolds);
    let need_folds = matches!(members, Members::Folds | Members::MasterFolds);
    let master = match (need_master, master) {
        (true, None) => return Err(Error::Config("aggregate needs a master network".into())),
        (true, Some(m)) => Some(m),
        (false, _) => None,
    };
    if need_folds && folds.is_empty() {
        return Err(Error::Config("aggregate needs at least one fold network".into()));
    }
    let fold_mean = need_folds.then(|| {
        let c = folds[0].len();
        let mut mean = vec![0.0; c];
        for f in folds {
            for (m, v) in mean.iter_mut().zip(f.iter()) {
                *m += v.exp();
            }
        }
        mean.iter_mut().for_each(|m| *m /= folds.len() as f64);
        mean
    });
    let master_p = master.map(|m| m.iter().map(|v| v.exp()).collect::<Vec<f64>>());
    Ok(Vector(match (master_p, fold_mean) {
        (Some(m), None) => m,
        (None, Some(f)) => f,
        (Some(m), Some(f)) => m
            .iter()
            .zip(&f)
            .map(|(a, b)| master_weight * a + (1.0 - master_weight) * b)
            .collect(),
        (None, None) => unreachable!("members select at least one source"),
    }))
}

/// [`aggregate`] over every frame of an utterance.
pub fn aggregate_sequence(members: Members, outputs: &MemberOutputs, master_weight: f64) -> Result<Matrix> {
    let any = outputs
        .master
        .as_ref()
        .or(outputs.folds.first())
        .ok_or_else(|| Error::Config("no member outputs".into()))?;
    let (t_len, c) = (any.rows(), any.cols());
    let mut data = Vec::with_capacity(t_len * c);
    for t in 0..t_len {
        let folds: Vec<&[f64]> = outputs.folds.iter().map(|m| m.row(t)).collect();
        let master = outputs.master.as_ref().map(|m| m.row(t));
        data.extend(aggregate(members, master, &folds, master_weight)?.0);
    }
    Matrix::from_vec(t_len, c, data)
}

/// Frame posteriors of all six scenarios for each utterance, in
/// [`Scenario::ALL`] order.
pub fn evaluate_scenarios(ensemble: &Ensemble, utts: &[Utterance]) -> Result<Vec<(Scenario, Vec<Matrix>)>> {
    let mut out: Vec<(Scenario, Vec<Matrix>)> = Scenario::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for u in utts {
        let outputs = ensemble.member_outputs(&u.features)?;
        for (s, v) in out.iter_mut() {
            v.push(ensemble.scenario_posteriors(*s, &outputs)?);
        }
    }
    Ok(out)
}

/// Mean frame cross-entropy of probability matrices against labels.
pub fn posterior_cross_entropy(posteriors: &[Matrix], labels: &[Vec<usize>]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for (p, l) in posteriors.iter().zip(labels) {
        if p.rows() != l.len() {
            return Err(Error::shape("posterior_cross_entropy", l.len(), p.rows()));
        }
        for (t, &y) in l.iter().enumerate() {
            total -= p[(t, y)].ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("no frames".into()));
    }
    Ok(total / n as f64)
}

/// `(CE of the fold-mean posterior, mean of member CEs)` for member
/// log-posteriors `member_lps[m][u]`. The first never exceeds the second.
pub fn jensen_check(member_lps: &[Vec<Matrix>], labels: &[Vec<usize>]) -> Result<(f64, f64)> {
    if member_lps.is_empty() {
        return Err(Error::Config("no ensemble members".into()));
    }
    let mut member_ce = 0.0;
    for lps in member_lps {
        let probs: Vec<Matrix> = lps.iter().map(|m| exp_matrix(m)).collect();
        member_ce += posterior_cross_entropy(&probs, labels)?;
    }
    member_ce /= member_lps.len() as f64;
    let mut mixed = Vec::with_capacity(labels.len());
    for u in 0..labels.len() {
        let outputs = MemberOutputs {
            master: None,
            folds: member_lps.iter().map(|m| m[u].clone()).collect(),
        };
        mixed.push(aggregate_sequence(Members::Folds, &outputs, 0.0)?);
    }
    Ok((posterior_cross_entropy(&mixed, labels)?, member_ce))
}

pub fn exp_matrix(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    out
}

/// Elementwise log with probabilities floored at 1e-30.
pub fn log_matrix(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(1e-30).ln());
    out
}
