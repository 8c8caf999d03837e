use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nnam_core::cells::{forward_sequence_with, CellKind, NetworkConfig, Noise, RecurrentNetwork};
use nnam_core::corpus::{generate_synthetic, load_corpus, save_corpus, split_dev, Corpus, Utterance};
use nnam_core::decoder::{corpus_per, decode_log_posteriors, estimate_priors, ClassPrior, PerResult, PhoneSet};
use nnam_core::ensemble::{
    fit_rpl, load_ensemble, log_matrix, save_ensemble, split_folds, train_crogging, Ensemble,
};
use nnam_core::gradcheck::{check_network_gradients, random_case};
use nnam_core::io::{content_lines, write_atomic};
use nnam_core::model_io::{fmt_f64, load_model, save_model};
use nnam_core::numeric::Matrix;
use nnam_core::rng::Rng;
use nnam_core::training::{train_staged, EpochRecord, TrainConfig, TrainLog};

use crate::config::{Config, UsageError};
use crate::setup::{self, stream};

pub const MODEL_FILE: &str = "model.txt";
pub const TRAIN_LOG_FILE: &str = "train.log";
pub const MANIFEST_FILE: &str = "ensemble.txt";
pub const HYP_FILE: &str = "hyp.txt";
pub const SCORE_FILE: &str = "score.txt";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug)]
pub enum CliError {
    Usage(UsageError),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<nnam_core::Error> for CliError {
    fn from(e: nnam_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(UsageError(msg.into()))
}

pub fn require_out(out: Option<&Path>) -> CliResult<PathBuf> {
    let out = out.ok_or_else(|| usage("this command needs --out <dir>"))?;
    fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}

fn load_data(dir: &Path) -> CliResult<Corpus> {
    load_corpus(dir).map_err(|e| CliError::Runtime(format!("loading corpus {}: {e}", dir.display())))
}

/// Train and dev sets; a corpus without a dev split gives up a
/// `train.dev_fraction` share of its training utterances.
pub fn train_dev(corpus: &Corpus, cfg: &Config, rng: &Rng) -> CliResult<(Vec<Utterance>, Vec<Utterance>)> {
    if corpus.dev.is_empty() {
        Ok(split_dev(&corpus.train, cfg.real("train.dev_fraction"), &mut rng.fork(stream::DEV))?)
    } else {
        Ok((corpus.train.clone(), corpus.dev.clone()))
    }
}

/// One network: init from `rng.fork(INIT)`, train from `rng.fork(TRAIN)`.
pub fn fit_network(
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    train: &[Utterance],
    dev: &[Utterance],
    rng: &Rng,
    observer: &mut dyn FnMut(&EpochRecord),
) -> CliResult<(RecurrentNetwork, TrainLog)> {
    let net = RecurrentNetwork::new(net_cfg.clone(), &mut rng.fork(stream::INIT))?;
    Ok(train_staged(net, train, dev, train_cfg, &mut rng.fork(stream::TRAIN), observer)?)
}

pub fn priors_of(train: &[Utterance], num_classes: usize) -> CliResult<ClassPrior> {
    Ok(estimate_priors(train.iter().map(|u| u.labels.as_slice()), num_classes)?)
}

fn progress(prefix: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |e: &EpochRecord| eprintln!("{prefix}stage {} epoch {} train_ce {:.4} dev_ce {:.4}", e.stage, e.epoch, e.train_ce, e.dev_ce)
}

pub fn cmd_synth(cfg: &Config, out: Option<&Path>) -> CliResult<()> {
    let out = require_out(out)?;
    let corpus = generate_synthetic(&setup::synth_spec(cfg), &mut setup::root_rng(cfg).fork(stream::SYNTH))?;
    save_corpus(&out, &corpus)?;
    println!(
        "wrote {} train, {} dev, {} test utterances ({} classes) to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.num_classes(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &Config, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let out = require_out(out)?;
    let train_cfg = setup::train_config(cfg)?;
    let corpus = load_data(data)?;
    let net_cfg = setup::network_config(cfg, corpus.feature_dim, corpus.num_classes())?;
    let rng = setup::train_rng(cfg)?;
    let (train, dev) = train_dev(&corpus, cfg, &rng)?;
    let (net, log) = fit_network(&net_cfg, &train_cfg, &train, &dev, &rng, &mut progress(""))?;
    save_model(&net, &out.join(MODEL_FILE))?;
    write_atomic(&out.join(TRAIN_LOG_FILE), log.to_text().as_bytes())?;
    println!(
        "{} model: dev CE {} -> {} over {} epochs",
        net_cfg.kind,
        fmt_ce(log.initial_dev_ce),
        fmt_ce(log.best_dev_ce()),
        log.epochs.len()
    );
    Ok(())
}

fn fmt_ce(v: f64) -> String {
    format!("{v:.4}")
}

pub fn cmd_train_ensemble(cfg: &Config, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let out = require_out(out)?;
    let train_cfg = setup::train_config(cfg)?;
    let corpus = load_data(data)?;
    let net_cfg = setup::network_config(cfg, corpus.feature_dim, corpus.num_classes())?;
    let rng = setup::train_rng(cfg)?;
    let (train, dev) = train_dev(&corpus, cfg, &rng)?;
    let ens = build_ensemble(cfg, &net_cfg, &train_cfg, &train, &dev, &rng, Some(&out))?;
    let manifest = save_ensemble(&out, &ens, MANIFEST_FILE)?;
    println!(
        "ensemble: {} folds{}{} -> {}",
        ens.folds.len(),
        if ens.master.is_some() { ", master" } else { "" },
        if ens.rpl.is_some() { ", rpl" } else { "" },
        manifest.display()
    );
    Ok(())
}

/// Folds (and, per config, master and RPL). Logs go to `log_dir` if given.
pub fn build_ensemble(
    cfg: &Config,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    train: &[Utterance],
    dev: &[Utterance],
    rng: &Rng,
    log_dir: Option<&Path>,
) -> CliResult<Ensemble> {
    let k = cfg.count("ensemble.folds");
    let ids: Vec<String> = train.iter().map(|u| u.id.clone()).collect();
    let split = split_folds(&ids, k, &mut rng.fork(stream::FOLDS))?;
    let cr = train_crogging(net_cfg, train_cfg, train, &split, &mut rng.fork(stream::CROGGING), &mut |j, e| {
        progress(&format!("fold {j} "))(e)
    })?;
    let master = if cfg.flag("ensemble.master") {
        let (net, log) = fit_network(net_cfg, train_cfg, train, dev, rng, &mut progress("master "))?;
        if let Some(d) = log_dir {
            write_atomic(&d.join("master.log"), log.to_text().as_bytes())?;
        }
        Some(net)
    } else {
        None
    };
    let rpl = if cfg.flag("ensemble.rpl") {
        let labels: Vec<Vec<usize>> = train.iter().map(|u| u.labels.clone()).collect();
        let fit = fit_rpl(&cr.held_out, &labels, &setup::rpl_config(cfg), &mut rng.fork(stream::RPL))?;
        if let Some(d) = log_dir {
            let text = format!(
                "identity_ce {}\nheld_aside_ce {}\niterations {}\n",
                fmt_f64(fit.identity_ce),
                fmt_f64(fit.held_aside_ce),
                fit.iterations
            );
            write_atomic(&d.join("rpl.log"), text.as_bytes())?;
        }
        Some(fit.params)
    } else {
        None
    };
    if let Some(d) = log_dir {
        for (j, log) in cr.logs.iter().enumerate() {
            write_atomic(&d.join(format!("fold{j}.log")), log.to_text().as_bytes())?;
        }
        let folds: String = ids.iter().zip(&split.fold).map(|(id, f)| format!("{id} {f}\n")).collect();
        write_atomic(&d.join("folds.txt"), folds.as_bytes())?;
    }
    Ok(Ensemble::new(master, cr.nets, rpl, cfg.real("ensemble.master_weight"))?)
}

fn split_of<'a>(corpus: &'a Corpus, name: &str) -> &'a [Utterance] {
    match name {
        "train" => &corpus.train,
        "dev" => &corpus.dev,
        _ => &corpus.test,
    }
}

pub enum Source<'a> {
    Model(&'a Path),
    Ensemble(&'a Path),
    Uniform,
}

pub fn cmd_decode(cfg: &Config, data: &Path, source: Source, out: Option<&Path>) -> CliResult<()> {
    let out = require_out(out)?;
    let corpus = load_data(data)?;
    let utts = split_of(&corpus, cfg.str("decode.split"));
    let opts = setup::decode_options(cfg);
    let priors = priors_of(&corpus.train, corpus.num_classes())?;
    let c = corpus.num_classes();
    let posteriors: Box<dyn Fn(&Utterance) -> CliResult<Matrix>> = match source {
        Source::Uniform => Box::new(|u: &Utterance| Ok(Matrix::zeros(u.frames(), c))),
        Source::Model(p) => {
            let net = load_model(p)?;
            check_classes(net.num_classes(), c)?;
            Box::new(move |u: &Utterance| Ok(forward_sequence_with(&net, &u.features, &Noise::Eval)?))
        }
        Source::Ensemble(p) => {
            let ens = load_ensemble(p)?;
            check_classes(ens.num_classes(), c)?;
            let scenario = setup::scenario(cfg);
            Box::new(move |u: &Utterance| {
                let outputs = ens.member_outputs(&u.features)?;
                Ok(log_matrix(&ens.scenario_posteriors(scenario, &outputs)?))
            })
        }
    };
    let uniform = matches!(source, Source::Uniform);
    let mut text = String::new();
    for u in utts {
        let lp = posteriors(u)?;
        let hyp = if uniform {
            let flat = nnam_core::decoder::DecodeOptions { use_priors: false, ..opts };
            decode_log_posteriors(&lp, &corpus.graph, None, &flat)?
        } else {
            decode_log_posteriors(&lp, &corpus.graph, Some(&priors), &opts)?
        };
        text.push_str(&transcript_line(&u.id, &hyp));
    }
    write_atomic(&out.join(HYP_FILE), text.as_bytes())?;
    println!("decoded {} utterances -> {}", utts.len(), out.join(HYP_FILE).display());
    Ok(())
}

fn check_classes(model: usize, corpus: usize) -> CliResult<()> {
    if model != corpus {
        return Err(CliError::Runtime(format!("model predicts {model} classes but the corpus has {corpus}")));
    }
    Ok(())
}

pub fn transcript_line(id: &str, phones: &[String]) -> String {
    let mut s = id.to_string();
    for p in phones {
        s.push(' ');
        s.push_str(p);
    }
    s.push('\n');
    s
}

/// `<id> <phones...>` lines, in file order.
pub fn read_transcripts(path: &Path) -> CliResult<Vec<(String, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (no, line) in content_lines(&text) {
        let mut f = line.split_whitespace();
        let id = f.next().expect("content lines are nonempty").to_string();
        if !seen.insert(id.clone()) {
            return Err(CliError::Runtime(format!("{}:{no}: duplicate utterance `{id}`", path.display())));
        }
        out.push((id, f.map(str::to_string).collect()));
    }
    Ok(out)
}

pub fn format_score(r: &PerResult) -> String {
    format!(
        "PER {:.2} S {} D {} I {} N {}",
        r.per, r.substitutions, r.deletions, r.insertions, r.ref_len
    )
}

pub enum References<'a> {
    File(&'a Path),
    Corpus(&'a Path),
}

pub fn cmd_score(cfg: &Config, hyp: &Path, refs: References, out: Option<&Path>) -> CliResult<()> {
    let hyps = read_transcripts(hyp)?;
    let (refs, phones) = match refs {
        References::File(p) => {
            let r = read_transcripts(p)?;
            let symbols: BTreeSet<String> = r.iter().chain(&hyps).flat_map(|(_, s)| s.iter().cloned()).collect();
            (r, PhoneSet::new(symbols.into_iter().collect())?)
        }
        References::Corpus(dir) => {
            let corpus = load_data(dir)?;
            let r = split_of(&corpus, cfg.str("decode.split"))
                .iter()
                .map(|u| (u.id.clone(), u.transcript.clone()))
                .collect();
            (r, corpus.phones().clone())
        }
    };
    let pairs = align_ids(&refs, &hyps)?;
    let result = corpus_per(&pairs, &phones)?;
    let line = format_score(&result);
    println!("{line}");
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_atomic(&out.join(SCORE_FILE), format!("{line}\n").as_bytes())?;
    }
    Ok(())
}

/// Pairs references with hypotheses by id; both sides must cover the same ids.
fn align_ids(refs: &[(String, Vec<String>)], hyps: &[(String, Vec<String>)]) -> CliResult<Vec<(Vec<String>, Vec<String>)>> {
    let mut pairs = Vec::with_capacity(refs.len());
    for (id, r) in refs {
        let h = hyps
            .iter()
            .find(|(hid, _)| hid == id)
            .ok_or_else(|| CliError::Runtime(format!("no hypothesis for utterance `{id}`")))?;
        pairs.push((r.clone(), h.1.clone()));
    }
    if let Some((extra, _)) = hyps.iter().find(|(hid, _)| !refs.iter().any(|(rid, _)| rid == hid)) {
        return Err(CliError::Runtime(format!("hypothesis `{extra}` has no reference")));
    }
    Ok(pairs)
}

/// Returns whether every kind passed.
pub fn cmd_gradcheck(cfg: &Config, kinds: &[CellKind], corrupt: Option<&str>, out: Option<&Path>) -> CliResult<bool> {
    let kinds = if kinds.is_empty() { &CellKind::ALL[..] } else { kinds };
    let tol = cfg.real("gradcheck.tolerance");
    let seed0 = cfg.seed("seed");
    let mut text = String::new();
    let mut all_pass = true;
    for &kind in kinds {
        let mut worst = (0.0f64, String::new(), seed0);
        for s in 0..cfg.count("gradcheck.seeds") as u64 {
            let seed = seed0.wrapping_add(s);
            let (net, x, y, noise) = random_case(kind, cfg.count("gradcheck.hidden"), cfg.count("gradcheck.frames"), seed)?;
            let r = check_network_gradients(&net, &x, &y, &noise, cfg.real("gradcheck.step"), corrupt)?;
            if r.max_rel_error > worst.0 || worst.1.is_empty() {
                worst = (r.max_rel_error, r.worst, seed);
            }
        }
        let pass = worst.0 < tol;
        all_pass &= pass;
        let line = format!(
            "{kind} {} max_rel_err {:.3e} worst {} seed {}\n",
            if pass { "PASS" } else { "FAIL" },
            worst.0,
            worst.1,
            worst.2
        );
        print!("{line}");
        text.push_str(&line);
    }
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_atomic(&out.join(GRADCHECK_FILE), text.as_bytes())?;
    }
    Ok(all_pass)
}

pub fn cmd_experiment(cfg: &Config, data: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let out = require_out(out)?;
    let corpus = match data {
        Some(d) => load_data(d)?,
        None => generate_synthetic(&setup::synth_spec(cfg), &mut setup::root_rng(cfg).fork(stream::SYNTH))?,
    };
    let result = crate::experiment::run_experiment(cfg, &corpus, &mut |r, msg| eprintln!("run {r}: {msg}"))?;
    let report = result.report();
    print!("{report}");
    write_atomic(&out.join(REPORT_FILE), report.as_bytes())?;
    Ok(())
}
