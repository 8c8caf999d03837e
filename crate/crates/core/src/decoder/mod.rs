//! Hybrid HMM/NN phone decoding: monophone left-to-right HMMs, a bigram
//! phone model, exact Viterbi search, and PER scoring.

mod brute;
mod files;
mod score;
mod viterbi;

use std::collections::{BTreeMap, HashMap};

pub use brute::{brute_force_decode, count_paths, MAX_BRUTE_FORCE_PATHS};
pub use files::{
    load_bigram, load_graph, load_hmms, load_phone_map, load_phones, save_bigram, save_graph, save_hmms,
    save_phone_map, save_phones, BIGRAM_FILE, HMM_FILE, PHONES_FILE, PHONE_MAP_FILE,
};
pub use score::{per, PerResult};
pub use viterbi::{path_score, viterbi_decode, DecodeResult, PathStep};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, Matrix};

const LOG_TOL: f64 = 1e-10;

/// Ordered phone symbols and the scoring map applied after decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneSet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    mapping: BTreeMap<String, String>,
}

impl PhoneSet {
    /// Phone set with the identity scoring map.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mapping = symbols.iter().map(|s| (s.clone(), s.clone())).collect();
        Self::with_mapping(symbols, mapping)
    }

    pub fn with_mapping(symbols: Vec<String>, mapping: BTreeMap<String, String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate phone symbol `{s}`")));
            }
        }
        for s in &symbols {
            if !mapping.contains_key(s) {
                return Err(Error::Config(format!("phone `{s}` has no mapping target")));
            }
        }
        Ok(Self {
            symbols,
            index,
            mapping,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn index_of(&self, symbol: &str) -> Result<usize> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn mapping(&self) -> &BTreeMap<String, String> {
        &self.mapping
    }

    pub fn symbols_of(&self, seq: &[usize]) -> Vec<String> {
        seq.iter().map(|&i| self.symbols[i].clone()).collect()
    }
}

/// Maps every symbol through the phone map, then merges adjacent duplicates
/// the mapping created.
pub fn map_phones(seq: &[String], ps: &PhoneSet) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(seq.len());
    let mut prev_source: Option<&str> = None;
    for s in seq {
        let target = ps
            .mapping
            .get(s)
            .or_else(|| ps.mapping.values().find(|t| *t == s))
            .ok_or_else(|| Error::UnknownSymbol(s.clone()))?;
        let merged = out.last() == Some(target) && prev_source != Some(s.as_str());
        if !merged {
            out.push(target.clone());
        }
        prev_source = Some(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmState {
    /// Network output class this state emits.
    pub class: usize,
    pub self_loop: f64,
    pub forward: f64,
}

/// Left-to-right HMM of one phone. The last state's forward transition
/// leaves the phone.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneHmm {
    pub states: Vec<HmmState>,
}

impl PhoneHmm {
    pub fn new(states: Vec<HmmState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Config("phone HMM needs at least one state".into()));
        }
        for (i, s) in states.iter().enumerate() {
            let total = log_sum_exp(&[s.self_loop, s.forward]);
            if total.abs() > LOG_TOL {
                return Err(Error::Config(format!(
                    "state {i}: outgoing transition log-probs sum to {total}, not 0"
                )));
            }
        }
        Ok(Self { states })
    }

    /// `states` states with self-loop probability `self_loop`, emitting
    /// classes `first_class..first_class + states`.
    pub fn uniform(states: usize, self_loop: f64, first_class: usize) -> Result<Self> {
        let s = (0..states)
            .map(|k| HmmState {
                class: first_class + k,
                self_loop: self_loop.ln(),
                forward: (1.0 - self_loop).ln(),
            })
            .collect();
        Self::new(s)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Bigram phone model in the log domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    pub initial: Vec<f64>,
    /// `trans[i][j] = log P(j | i)`.
    pub trans: Vec<Vec<f64>>,
}

impl BigramLm {
    pub fn new(initial: Vec<f64>, trans: Vec<Vec<f64>>) -> Result<Self> {
        let n = initial.len();
        if trans.len() != n || trans.iter().any(|r| r.len() != n) {
            return Err(Error::shape("bigram", n, trans.len()));
        }
        for (name, row) in std::iter::once(("initial".to_string(), &initial))
            .chain(trans.iter().enumerate().map(|(i, r)| (format!("row {i}"), r)))
        {
            let total = log_sum_exp(row);
            if total.abs() > LOG_TOL {
                return Err(Error::Config(format!("bigram {name} log-sums to {total}, not 0")));
            }
        }
        Ok(Self { initial, trans })
    }

    pub fn uniform(n: usize) -> Self {
        let l = -(n as f64).ln();
        Self {
            initial: vec![l; n],
            trans: vec![vec![l; n]; n],
        }
    }

    pub fn num_phones(&self) -> usize {
        self.initial.len()
    }
}

/// Per-class log prior used to turn posteriors into scaled likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrior {
    pub log_prior: Vec<f64>,
}

impl ClassPrior {
    pub fn uniform(n: usize) -> Self {
        Self {
            log_prior: vec![-(n as f64).ln(); n],
        }
    }
}

/// Phone inventory, HMMs and bigram consumed by the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeGraph {
    pub phones: PhoneSet,
    pub hmms: Vec<PhoneHmm>,
    pub lm: BigramLm,
}

impl DecodeGraph {
    pub fn new(phones: PhoneSet, hmms: Vec<PhoneHmm>, lm: BigramLm) -> Result<Self> {
        if hmms.len() != phones.len() || lm.num_phones() != phones.len() {
            return Err(Error::shape(
                "decode graph",
                format!("{} phones", phones.len()),
                format!("{} hmms, {} bigram rows", hmms.len(), lm.num_phones()),
            ));
        }
        Ok(Self { phones, hmms, lm })
    }

    pub fn num_classes(&self) -> usize {
        self.hmms
            .iter()
            .flat_map(|h| h.states.iter().map(|s| s.class + 1))
            .max()
            .unwrap_or(0)
    }
}

/// Add-one smoothed bigram over phone index sequences.
pub fn estimate_bigram(transcripts: &[Vec<usize>], num_phones: usize) -> Result<BigramLm> {
    if transcripts.iter().all(|t| t.is_empty()) || num_phones == 0 {
        return Err(Error::Data("cannot estimate a bigram from an empty corpus".into()));
    }
    let mut init = vec![1.0; num_phones];
    let mut pairs = vec![vec![1.0; num_phones]; num_phones];
    for t in transcripts {
        for &p in t {
            if p >= num_phones {
                return Err(Error::Index {
                    index: p,
                    len: num_phones,
                });
            }
        }
        if let Some(&first) = t.first() {
            init[first] += 1.0;
        }
        for w in t.windows(2) {
            pairs[w[0]][w[1]] += 1.0;
        }
    }
    let normalize = |row: Vec<f64>| -> Vec<f64> {
        let total: f64 = row.iter().sum();
        row.into_iter().map(|c| (c / total).ln()).collect()
    };
    BigramLm::new(normalize(init), pairs.into_iter().map(normalize).collect())
}

/// Add-one smoothed class frequencies over frame labels.
pub fn estimate_priors<'a>(labels: impl IntoIterator<Item = &'a [usize]>, num_classes: usize) -> Result<ClassPrior> {
    let mut counts = vec![1.0; num_classes];
    let mut frames = 0usize;
    for seq in labels {
        for &c in seq {
            if c >= num_classes {
                return Err(Error::Index {
                    index: c,
                    len: num_classes,
                });
            }
            counts[c] += 1.0;
            frames += 1;
        }
    }
    if frames == 0 || num_classes == 0 {
        return Err(Error::Data("cannot estimate class priors from an empty corpus".into()));
    }
    let total: f64 = counts.iter().sum();
    Ok(ClassPrior {
        log_prior: counts.into_iter().map(|c| (c / total).ln()).collect(),
    })
}

/// `scale · (log_posterior − log_prior)`; `priors = None` skips the division.
pub fn posteriors_to_scores(log_posteriors: &Matrix, priors: Option<&ClassPrior>, scale: f64) -> Result<Matrix> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("acoustic scale must be > 0, got {scale}")));
    }
    if let Some(p) = priors {
        if p.log_prior.len() != log_posteriors.cols() {
            return Err(Error::shape("posteriors_to_scores", log_posteriors.cols(), p.log_prior.len()));
        }
    }
    let mut out = log_posteriors.clone();
    let cols = out.cols();
    for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
        let prior = priors.map_or(0.0, |p| p.log_prior[k % cols]);
        *v = scale * (*v - prior);
    }
    Ok(out)
}

/// Knobs of the posterior-to-transcript pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub lm_weight: f64,
    pub acoustic_scale: f64,
    pub use_priors: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            lm_weight: 1.0,
            acoustic_scale: 1.0,
            use_priors: true,
        }
    }
}

/// Converts frame log-posteriors to scores, runs Viterbi and returns the
/// phone symbols (before scoring-map application).
pub fn decode_log_posteriors(
    log_posteriors: &Matrix,
    graph: &DecodeGraph,
    priors: Option<&ClassPrior>,
    opts: &DecodeOptions,
) -> Result<Vec<String>> {
    let priors = if opts.use_priors { priors } else { None };
    let scores = posteriors_to_scores(log_posteriors, priors, opts.acoustic_scale)?;
    let best = viterbi_decode(&scores, &graph.hmms, &graph.lm, opts.lm_weight)?;
    Ok(graph.phones.symbols_of(&best.phones))
}

/// PER summed over utterances after mapping both sides through the phone map.
pub fn corpus_per(pairs: &[(Vec<String>, Vec<String>)], phones: &PhoneSet) -> Result<PerResult> {
    let (mut s, mut d, mut i, mut n) = (0, 0, 0, 0);
    for (reference, hypothesis) in pairs {
        let r = per(&map_phones(reference, phones)?, &map_phones(hypothesis, phones)?)?;
        s += r.substitutions;
        d += r.deletions;
        i += r.insertions;
        n += r.ref_len;
    }
    if n == 0 {
        return Err(Error::Scoring("no reference phones".into()));
    }
    Ok(PerResult {
        per: 100.0 * (s + d + i) as f64 / n as f64,
        substitutions: s,
        deletions: d,
        insertions: i,
        ref_len: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn mapping_merges_created_duplicates() {
        let ps = PhoneSet::new(syms(&["a", "b", "c"])).unwrap();
        assert_eq!(map_phones(&syms(&["a", "b", "c"]), &ps).unwrap(), syms(&["a", "b", "c"]));
        assert!(map_phones(&[], &ps).unwrap().is_empty());

        let mut m = ps.mapping().clone();
        m.insert("b".into(), "a".into());
        let ps = PhoneSet::with_mapping(syms(&["a", "b", "c"]), m).unwrap();
        assert_eq!(map_phones(&syms(&["a", "b", "c"]), &ps).unwrap(), syms(&["a", "c"]));
        let err = map_phones(&syms(&["a", "zz"]), &ps).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn mapping_is_idempotent() {
        let mut m = BTreeMap::new();
        for (s, t) in [("a", "a"), ("b", "a"), ("c", "c"), ("d", "c")] {
            m.insert(s.to_string(), t.to_string());
        }
        let ps = PhoneSet::with_mapping(syms(&["a", "b", "c", "d"]), m).unwrap();
        let once = map_phones(&syms(&["d", "b", "a", "c", "c", "b"]), &ps).unwrap();
        assert_eq!(map_phones(&once, &ps).unwrap(), once);
    }

    #[test]
    fn hmm_rows_must_normalize() {
        assert!(PhoneHmm::uniform(3, 0.5, 0).is_ok());
        let bad = HmmState {
            class: 0,
            self_loop: 0.5f64.ln(),
            forward: 0.6f64.ln(),
        };
        assert!(PhoneHmm::new(vec![bad]).is_err());
        assert!(PhoneHmm::new(vec![]).is_err());
    }

    #[test]
    fn bigram_single_transcript() {
        let lm = estimate_bigram(&[vec![0, 1]], 2).unwrap();
        assert!(lm.trans[0][1] > lm.trans[0][0]);
        assert!((lm.trans[0][1] - (2.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn bigram_hand_counts() {
        // transcripts: (a b a), (b b), (a c); phones a=0 b=1 c=2
        let lm = estimate_bigram(&[vec![0, 1, 0], vec![1, 1], vec![0, 2]], 3).unwrap();
        // initial counts a:2 b:1 c:0, +1 each, total 6
        let want_init: [f64; 3] = [3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        // pairs a->b 1, a->c 1, b->a 1, b->b 1
        let want: [[f64; 3]; 3] = [[1.0 / 5.0, 2.0 / 5.0, 2.0 / 5.0], [2.0 / 5.0, 2.0 / 5.0, 1.0 / 5.0], [1.0 / 3.0; 3]];
        for j in 0..3 {
            assert!((lm.initial[j] - want_init[j].ln()).abs() < 1e-15);
            for i in 0..3 {
                assert!((lm.trans[i][j] - want[i][j].ln()).abs() < 1e-15);
            }
        }
        for row in &lm.trans {
            assert!(log_sum_exp(row).abs() < 1e-10);
        }
        assert!(estimate_bigram(&[], 3).is_err());
    }

    #[test]
    fn priors_are_smoothed_frequencies() {
        let labels: Vec<&[usize]> = vec![&[0, 0, 1], &[0]];
        let p = estimate_priors(labels, 3).unwrap();
        let want: [f64; 3] = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for (a, b) in p.log_prior.iter().zip(want) {
            assert!((a - b.ln()).abs() < 1e-15);
        }
        assert!(log_sum_exp(&p.log_prior).abs() < 1e-10);
        assert!(estimate_priors(Vec::<&[usize]>::new(), 3).is_err());
    }

    #[test]
    fn score_conversion() {
        let lp = Matrix::from_rows(&[vec![-1.0, -0.5]]).unwrap();
        let s = posteriors_to_scores(&lp, Some(&ClassPrior { log_prior: vec![-2.0, -0.5] }), 0.8).unwrap();
        assert!((s[(0, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(s[(0, 1)], 0.0);
        let u = posteriors_to_scores(&lp, Some(&ClassPrior::uniform(2)), 1.0).unwrap();
        assert!((u[(0, 0)] - (-1.0 + 2f64.ln())).abs() < 1e-15);
        assert!(posteriors_to_scores(&lp, None, 0.0).is_err());
    }
}
