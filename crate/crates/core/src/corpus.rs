//! Labeled utterance corpora: the on-disk text format, a synthetic
//! HMM-based generator, and dev-set splitting.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::decoder::{load_graph, save_graph, BigramLm, DecodeGraph, PhoneHmm, PhoneSet};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model_io::fmt_f64;
use crate::numeric::Matrix;
use crate::rng::Rng;

pub const TRAIN_FILE: &str = "train.txt";
pub const DEV_FILE: &str = "dev.txt";
pub const TEST_FILE: &str = "test.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T × D` feature frames.
    pub features: Matrix,
    /// One class index per frame.
    pub labels: Vec<usize>,
    pub transcript: Vec<String>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

/// Train/dev/test splits plus the decoding graph that defines the phone set
/// and the class inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub feature_dim: usize,
    pub graph: DecodeGraph,
}

impl Corpus {
    /// Checks every corpus invariant.
    pub fn new(
        train: Vec<Utterance>,
        dev: Vec<Utterance>,
        test: Vec<Utterance>,
        feature_dim: usize,
        graph: DecodeGraph,
    ) -> Result<Self> {
        let c = Self {
            train,
            dev,
            test,
            feature_dim,
            graph,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn num_classes(&self) -> usize {
        self.graph.num_classes()
    }

    pub fn phones(&self) -> &PhoneSet {
        &self.graph.phones
    }

    pub fn all(&self) -> impl Iterator<Item = &Utterance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let classes = self.num_classes();
        let mut seen = HashSet::new();
        for u in self.all() {
            let bad = |msg: String| Error::Validation {
                utt: u.id.clone(),
                msg,
            };
            if !seen.insert(u.id.as_str()) {
                return Err(bad("utterance id appears more than once".into()));
            }
            if u.frames() == 0 {
                return Err(bad("no frames".into()));
            }
            if u.features.cols() != self.feature_dim {
                return Err(bad(format!(
                    "feature dim {} differs from corpus dim {}",
                    u.features.cols(),
                    self.feature_dim
                )));
            }
            if u.labels.len() != u.frames() {
                return Err(bad(format!("{} labels for {} frames", u.labels.len(), u.frames())));
            }
            if let Some(&l) = u.labels.iter().find(|&&l| l >= classes) {
                return Err(bad(format!("label {l} >= num_classes {classes}")));
            }
            if u.transcript.is_empty() {
                return Err(bad("empty transcript".into()));
            }
            for p in &u.transcript {
                self.graph.phones.index_of(p).map_err(|_| bad(format!("unknown phone `{p}`")))?;
            }
            if !u.features.is_finite() {
                return Err(bad("non-finite feature value".into()));
            }
        }
        Ok(())
    }
}

fn split_to_string(utts: &[Utterance]) -> String {
    let mut s = String::new();
    for u in utts {
        let _ = writeln!(s, "#utt {} {} {}", u.id, u.frames(), u.features.cols());
        for t in 0..u.frames() {
            let row: Vec<String> = u.features.row(t).iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        let labels: Vec<String> = u.labels.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "#labels\n{}", labels.join(" "));
        let _ = writeln!(s, "#phones\n{}", u.transcript.join(" "));
    }
    s
}

fn parse_split(text: &str, path: &Path) -> Result<Vec<Utterance>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut out = Vec::new();
    let last_line = text.lines().count();
    while let Some((no, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 4 || f[0] != "#utt" {
            return Err(Error::parse(path, no, format!("expected `#utt <id> <T> <D>`, found `{header}`")));
        }
        let id = f[1].to_string();
        let err = |line: usize, msg: String| Error::parse(path, line, format!("utterance `{id}`: {msg}"));
        let dim = |tok: &str, what: &str| tok.parse::<usize>().map_err(|_| err(no, format!("bad {what} `{tok}`")));
        let (t_len, d) = (dim(f[2], "frame count")?, dim(f[3], "feature dim")?);
        let mut next = |what: &str| lines.next().ok_or_else(|| err(last_line, format!("file ends before {what}")));

        let mut data = Vec::with_capacity(t_len * d);
        for t in 0..t_len {
            let (ln, row) = next(&format!("frame {t}"))?;
            let vals: Vec<&str> = row.split_whitespace().collect();
            if vals.len() != d || row.starts_with('#') {
                return Err(err(ln, format!("frame {t} has {} values, expected {d}", vals.len())));
            }
            for v in vals {
                data.push(v.parse::<f64>().map_err(|_| err(ln, format!("bad number `{v}`")))?);
            }
        }
        let (ln, tag) = next("#labels")?;
        if tag != "#labels" {
            return Err(err(ln, format!("expected `#labels`, found `{tag}`")));
        }
        let (ln, row) = next("the label row")?;
        let labels = row
            .split_whitespace()
            .map(|v| v.parse::<usize>().map_err(|_| err(ln, format!("bad label `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != t_len {
            return Err(err(ln, format!("{} labels for {t_len} frames", labels.len())));
        }
        let (ln, tag) = next("#phones")?;
        if tag != "#phones" {
            return Err(err(ln, format!("expected `#phones`, found `{tag}`")));
        }
        let (_, row) = next("the transcript")?;
        let transcript = row.split_whitespace().map(str::to_string).collect();
        out.push(Utterance {
            features: Matrix::from_vec(t_len, d, data)?,
            id,
            labels,
            transcript,
        });
    }
    Ok(out)
}

pub fn save_split(path: &Path, utts: &[Utterance]) -> Result<()> {
    write_atomic(path, split_to_string(utts).as_bytes())
}

pub fn load_split(path: &Path) -> Result<Vec<Utterance>> {
    parse_split(&fs::read_to_string(path)?, path)
}

/// Writes the three split files and the decoder sidecars into `dir`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    save_split(&dir.join(TRAIN_FILE), &corpus.train)?;
    save_split(&dir.join(DEV_FILE), &corpus.dev)?;
    save_split(&dir.join(TEST_FILE), &corpus.test)?;
    save_graph(dir, &corpus.graph)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let graph = load_graph(dir)?;
    let train = load_split(&dir.join(TRAIN_FILE))?;
    let dev = load_split(&dir.join(DEV_FILE))?;
    let test = load_split(&dir.join(TEST_FILE))?;
    let feature_dim = train.first().map_or(0, |u| u.features.cols());
    Corpus::new(train, dev, test, feature_dim, graph)
}

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub phones: usize,
    pub states: usize,
    pub feature_dim: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Standard deviation of the Gaussian noise added to state means.
    pub noise: f64,
    pub self_loop: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            phones: 10,
            states: 2,
            feature_dim: 12,
            train: 120,
            dev: 20,
            test: 20,
            min_frames: 30,
            max_frames: 80,
            noise: 1.5,
            self_loop: 0.5,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.phones < 2 {
            return bad("need at least 2 phones");
        }
        if self.states == 0 || self.feature_dim == 0 {
            return bad("states and feature_dim must be >= 1");
        }
        if self.train == 0 {
            return bad("need at least one training utterance");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("need 1 <= min_frames <= max_frames");
        }
        if self.max_frames < self.states {
            return bad("max_frames is shorter than one phone");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be a finite value >= 0");
        }
        if !(self.self_loop > 0.0 && self.self_loop < 1.0) {
            return bad("self_loop must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Random distribution over `n` outcomes (flat Dirichlet), zeroing `skip`.
fn random_distribution(n: usize, skip: Option<usize>, rng: &mut Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|j| if Some(j) == skip { 0.0 } else { -(1.0 - rng.uniform()).ln() })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// The generating model of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub initial: Vec<f64>,
    /// Phone transition probabilities; a phone never follows itself.
    pub trans: Vec<Vec<f64>>,
    /// One mean vector per class.
    pub means: Matrix,
}

impl SynthModel {
    pub fn sample(spec: &SynthSpec, rng: &mut Rng) -> Self {
        let p = spec.phones;
        let initial = random_distribution(p, None, rng);
        let trans = (0..p).map(|i| random_distribution(p, Some(i), rng)).collect();
        let classes = p * spec.states;
        let means = (0..classes * spec.feature_dim).map(|_| rng.normal()).collect();
        Self {
            initial,
            trans,
            means: Matrix::from_vec(classes, spec.feature_dim, means).expect("sized above"),
        }
    }

    pub fn bigram(&self) -> BigramLm {
        let ln = |r: &[f64]| r.iter().map(|v| v.ln()).collect::<Vec<_>>();
        BigramLm {
            initial: ln(&self.initial),
            trans: self.trans.iter().map(|r| ln(r)).collect(),
        }
    }

    /// Draws phone indices and frame labels with length in
    /// `[min_frames, max_frames]`.
    fn walk(&self, spec: &SynthSpec, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
        loop {
            let target = rng.between(spec.min_frames, spec.max_frames);
            let mut phones: Vec<usize> = Vec::new();
            let mut labels = Vec::new();
            while labels.len() < target {
                let p = match phones.last() {
                    None => sample_index(&self.initial, rng),
                    Some(&prev) => sample_index(&self.trans[prev], rng),
                };
                phones.push(p);
                for s in 0..spec.states {
                    labels.push(p * spec.states + s);
                    while rng.bernoulli(spec.self_loop) {
                        labels.push(p * spec.states + s);
                    }
                }
            }
            if labels.len() <= spec.max_frames {
                return (phones, labels);
            }
        }
    }
}

fn phone_symbol(p: usize) -> String {
    format!("ph{p}")
}

/// Samples a corpus from a random bigram over left-to-right phone HMMs with
/// Gaussian state emissions. Also returns the generating model.
pub fn generate_synthetic_with_model(spec: &SynthSpec, rng: &mut Rng) -> Result<(Corpus, SynthModel)> {
    spec.validate()?;
    let model = SynthModel::sample(spec, rng);
    let symbols: Vec<String> = (0..spec.phones).map(phone_symbol).collect();
    let phones = PhoneSet::new(symbols.clone())?;
    let hmms = (0..spec.phones)
        .map(|p| PhoneHmm::uniform(spec.states, spec.self_loop, p * spec.states))
        .collect::<Result<Vec<_>>>()?;
    let graph = DecodeGraph::new(phones, hmms, model.bigram())?;

    let d = spec.feature_dim;
    let make = |name: &str, n: usize, rng: &mut Rng| -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                let (seq, labels) = model.walk(spec, rng);
                let mut data = Vec::with_capacity(labels.len() * d);
                for &c in &labels {
                    for &m in model.means.row(c) {
                        data.push(m + spec.noise * rng.normal());
                    }
                }
                Utterance {
                    id: format!("{name}{i:04}"),
                    features: Matrix::from_vec(labels.len(), d, data).expect("sized above"),
                    labels,
                    transcript: seq.iter().map(|&p| symbols[p].clone()).collect(),
                }
            })
            .collect()
    };
    let train = make("train", spec.train, rng);
    let dev = make("dev", spec.dev, rng);
    let test = make("test", spec.test, rng);
    let corpus = Corpus::new(train, dev, test, d, graph)?;
    Ok((corpus, model))
}

pub fn generate_synthetic(spec: &SynthSpec, rng: &mut Rng) -> Result<Corpus> {
    generate_synthetic_with_model(spec, rng).map(|(c, _)| c)
}

/// Moves a seeded random `fraction` of `utts` into a new dev list; both
/// parts keep their original order.
pub fn split_dev(utts: &[Utterance], fraction: f64, rng: &mut Rng) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("dev fraction must lie in (0, 1), got {fraction}")));
    }
    let n_dev = (fraction * utts.len() as f64).round() as usize;
    if n_dev == 0 || n_dev == utts.len() {
        return Err(Error::Config(format!(
            "dev fraction {fraction} of {} utterances leaves an empty split",
            utts.len()
        )));
    }
    let mut order: Vec<usize> = (0..utts.len()).collect();
    rng.shuffle(&mut order);
    let mut is_dev = vec![false; utts.len()];
    order[..n_dev].iter().for_each(|&i| is_dev[i] = true);
    let (dev, train): (Vec<_>, Vec<_>) = utts.iter().cloned().zip(is_dev).partition(|(_, d)| *d);
    Ok((train.into_iter().map(|(u, _)| u).collect(), dev.into_iter().map(|(u, _)| u).collect()))
}
