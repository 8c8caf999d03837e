//! Repeated master + folds + RPL runs, decoded under all six scenarios.

use std::fmt::Write as _;

use nnam_core::corpus::Corpus;
use nnam_core::decoder::{corpus_per, decode_log_posteriors, PerResult};
use nnam_core::ensemble::{evaluate_scenarios, jensen_check, log_matrix, Ensemble, Scenario};
use nnam_core::numeric::Matrix;

use crate::commands::{build_ensemble, priors_of, train_dev, CliError, CliResult};
use crate::config::Config;
use crate::setup::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// In [`Scenario::ALL`] order.
    pub per: Vec<PerResult>,
    /// Test-set CE of the folds-mean posterior and mean member CE.
    pub jensen: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub cell: String,
    pub folds: usize,
    pub seed: u64,
    pub runs: Vec<RunResult>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ExperimentResult {
    pub fn scenario_pers(&self, s: Scenario) -> Vec<f64> {
        let i = Scenario::ALL.iter().position(|&x| x == s).expect("known scenario");
        self.runs.iter().map(|r| r.per[i].per).collect()
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {} runs, {} folds, {} cell, seed {}",
            self.runs.len(),
            self.folds,
            self.cell,
            self.seed
        );
        for (r, run) in self.runs.iter().enumerate() {
            for (sc, p) in Scenario::ALL.iter().zip(&run.per) {
                let _ = writeln!(s, "run {r} {sc} {}", crate::commands::format_score(p));
            }
            let _ = writeln!(s, "run {r} jensen folds_mean_ce {:.6} member_mean_ce {:.6}", run.jensen.0, run.jensen.1);
        }
        let _ = writeln!(s, "# scenario PER mean ± std");
        for sc in Scenario::ALL {
            let (m, sd) = mean_std(&self.scenario_pers(sc));
            let _ = writeln!(s, "{:<17} {m:.2} ± {sd:.2}", sc.name());
        }
        s
    }
}

/// Runs `experiment.runs` independent trainings on `corpus`. Run `r` draws
/// from the training root's `RUNS` stream forked by `r`. Every run checks
/// the folds-mean cross-entropy bound and fails if it is violated.
pub fn run_experiment(cfg: &Config, corpus: &Corpus, log: &mut dyn FnMut(usize, &str)) -> CliResult<ExperimentResult> {
    let runs = cfg.count("experiment.runs");
    if runs == 0 {
        return Err(CliError::Usage(crate::config::UsageError("experiment.runs must be >= 1".into())));
    }
    if corpus.test.is_empty() {
        return Err(CliError::Runtime("experiment needs a nonempty test split".into()));
    }
    let mut run_cfg = cfg.clone();
    run_cfg.set("ensemble.master", "true")?;
    run_cfg.set("ensemble.rpl", "true")?;
    let net_cfg = setup::network_config(cfg, corpus.feature_dim, corpus.num_classes())?;
    let train_cfg = setup::train_config(cfg)?;
    let rng = setup::train_rng(cfg)?;
    let (train, dev) = train_dev(corpus, cfg, &rng)?;
    let priors = priors_of(&train, corpus.num_classes())?;
    let opts = setup::decode_options(cfg);
    let labels: Vec<Vec<usize>> = corpus.test.iter().map(|u| u.labels.clone()).collect();

    let mut out = ExperimentResult {
        cell: net_cfg.kind.to_string(),
        folds: cfg.count("ensemble.folds"),
        seed: rng.seed(),
        runs: Vec::with_capacity(runs),
    };
    for r in 0..runs {
        let run_rng = rng.fork(stream::RUNS).fork(r as u64);
        let ens: Ensemble = build_ensemble(&run_cfg, &net_cfg, &train_cfg, &train, &dev, &run_rng, None)?;
        let mut per = Vec::with_capacity(Scenario::ALL.len());
        for (sc, posteriors) in evaluate_scenarios(&ens, &corpus.test)? {
            let mut pairs = Vec::with_capacity(posteriors.len());
            for (u, p) in corpus.test.iter().zip(&posteriors) {
                let hyp = decode_log_posteriors(&log_matrix(p), &corpus.graph, Some(&priors), &opts)?;
                pairs.push((u.transcript.clone(), hyp));
            }
            let res = corpus_per(&pairs, corpus.phones())?;
            log(r, &format!("{sc} PER {:.2}", res.per));
            per.push(res);
        }
        let member_lps: Vec<Vec<Matrix>> = ens
            .folds
            .iter()
            .map(|net| {
                corpus
                    .test
                    .iter()
                    .map(|u| nnam_core::cells::forward_sequence_with(net, &u.features, &nnam_core::cells::Noise::Eval))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        let jensen = jensen_check(&member_lps, &labels)?;
        if jensen.0 > jensen.1 + 1e-12 {
            return Err(CliError::Runtime(format!(
                "run {r}: folds-mean CE {} exceeds mean member CE {}",
                jensen.0, jensen.1
            )));
        }
        out.runs.push(RunResult { per, jensen });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
