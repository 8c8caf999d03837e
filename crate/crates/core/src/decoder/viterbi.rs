use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

use super::{BigramLm, PhoneHmm};

/// One frame of a state path. `entry` marks the first frame of a phone
/// occurrence, which distinguishes re-entering a one-state phone from its
/// self-loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathStep {
    pub phone: usize,
    pub state: usize,
    pub entry: bool,
}

impl PathStep {
    pub(crate) fn new(phone: usize, state: usize, entry: bool) -> Self {
        Self { phone, state, entry }
    }
}

/// Best path: phone indices, per-frame states, total score.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub phones: Vec<usize>,
    pub states: Vec<PathStep>,
    pub score: f64,
}

pub(crate) fn validate(scores: &Matrix, hmms: &[PhoneHmm], lm: &BigramLm) -> Result<()> {
    if hmms.is_empty() {
        return Err(Error::Decode("empty phone set".into()));
    }
    if scores.rows() == 0 {
        return Err(Error::Decode("no frames to decode".into()));
    }
    if lm.num_phones() != hmms.len() {
        return Err(Error::Decode(format!(
            "bigram covers {} phones, HMM set has {}",
            lm.num_phones(),
            hmms.len()
        )));
    }
    for (p, h) in hmms.iter().enumerate() {
        if h.states.is_empty() {
            return Err(Error::Decode(format!("phone {p} has no states")));
        }
        if let Some(s) = h.states.iter().find(|s| s.class >= scores.cols()) {
            return Err(Error::Decode(format!(
                "phone {p} state emits class {} but scores have {} columns",
                s.class,
                scores.cols()
            )));
        }
    }
    Ok(())
}

/// Score of an explicit `(phone, state)` path, recomputed from scratch.
pub fn path_score(
    scores: &Matrix,
    hmms: &[PhoneHmm],
    lm: &BigramLm,
    lm_weight: f64,
    path: &[PathStep],
) -> Result<f64> {
    let Some(first) = path.first() else {
        return Err(Error::Decode("empty path".into()));
    };
    if first.state != 0 || !first.entry {
        return Err(Error::Decode("path must start by entering a phone".into()));
    }
    let p0 = first.phone;
    let mut total = lm_weight * lm.initial[p0] + scores[(0, hmms[p0].states[0].class)];
    for t in 1..path.len() {
        let (prev, cur) = (path[t - 1], path[t]);
        let from = &hmms[prev.phone].states[prev.state];
        let step = if cur.entry {
            if cur.state != 0 || prev.state + 1 != hmms[prev.phone].len() {
                return Err(Error::Decode(format!("illegal phone entry at frame {t}")));
            }
            from.forward + lm_weight * lm.trans[prev.phone][cur.phone]
        } else if cur.phone != prev.phone {
            return Err(Error::Decode(format!("phone change without entry at frame {t}")));
        } else if cur.state == prev.state {
            from.self_loop
        } else if cur.state == prev.state + 1 {
            from.forward
        } else {
            return Err(Error::Decode(format!("illegal transition at frame {t}")));
        };
        total = total + step + scores[(t, hmms[cur.phone].states[cur.state].class)];
    }
    let last = path[path.len() - 1];
    if last.state + 1 != hmms[last.phone].len() {
        return Err(Error::Decode("path must end in a final state".into()));
    }
    Ok(total)
}

pub(crate) fn phones_of(path: &[PathStep]) -> Vec<usize> {
    path.iter().filter(|s| s.entry).map(|s| s.phone).collect()
}

/// Order used to break exact score ties: smaller phone sequence first, then
/// smaller state path (both lexicographic).
pub(crate) fn tie_order(a: &[PathStep], b: &[PathStep]) -> Ordering {
    phones_of(a).cmp(&phones_of(b)).then_with(|| a.cmp(b))
}

const NONE: usize = usize::MAX;
const MAX_TIED_PATHS: u128 = 100_000;

/// Picks the smallest optimal path in `tie_order` by enumerating every path
/// through the tied backpointers. Greedy per-state tie breaking is not exact
/// because phone-sequence order is not preserved under extension when one
/// sequence is a prefix of the other. Returns `None` when there is a single
/// optimal path or too many to enumerate.
fn resolve_ties(tied: &[Vec<Vec<(usize, bool)>>], ids: &[(usize, usize)], finals: &[usize]) -> Option<Vec<PathStep>> {
    let t_len = tied.len();
    let n = ids.len();
    // count[t][g]: optimal partial paths ending in g at frame t
    let mut count = vec![vec![0u128; n]; t_len];
    for g in 0..n {
        count[0][g] = u128::from(ids[g].1 == 0);
    }
    for t in 1..t_len {
        for g in 0..n {
            count[t][g] = tied[t][g]
                .iter()
                .fold(0u128, |acc, &(f, _)| acc.saturating_add(count[t - 1][f]));
        }
    }
    let total = finals
        .iter()
        .fold(0u128, |acc, &f| acc.saturating_add(count[t_len - 1][f]));
    if total <= 1 || total > MAX_TIED_PATHS {
        return None;
    }
    let mut best: Option<Vec<PathStep>> = None;
    let mut rev = Vec::with_capacity(t_len);
    for &f in finals {
        walk(tied, ids, t_len - 1, f, &mut rev, &mut best);
    }
    best
}

fn walk(
    tied: &[Vec<Vec<(usize, bool)>>],
    ids: &[(usize, usize)],
    t: usize,
    g: usize,
    rev: &mut Vec<PathStep>,
    best: &mut Option<Vec<PathStep>>,
) {
    let (p, s) = ids[g];
    if t == 0 {
        rev.push(PathStep::new(p, s, true));
        let path: Vec<PathStep> = rev.iter().rev().copied().collect();
        if best.as_ref().map_or(true, |b| tie_order(&path, b) == Ordering::Less) {
            *best = Some(path);
        }
        rev.pop();
        return;
    }
    for &(from, entry) in &tied[t][g] {
        rev.push(PathStep::new(p, s, entry));
        walk(tied, ids, t - 1, from, rev, best);
        rev.pop();
    }
}

/// Exact Viterbi search over phone HMMs joined by the bigram.
///
/// Paths start in the first state of any phone (weighted by the initial
/// phone probability), move by self-loops or forward transitions, enter a new
/// phone only from the final state of the previous one (adding its exit
/// probability and the weighted bigram), and must end in a final state.
pub fn viterbi_decode(scores: &Matrix, hmms: &[PhoneHmm], lm: &BigramLm, lm_weight: f64) -> Result<DecodeResult> {
    validate(scores, hmms, lm)?;
    let t_len = scores.rows();
    let mut ids = Vec::new();
    let mut offset = Vec::with_capacity(hmms.len());
    for (p, h) in hmms.iter().enumerate() {
        offset.push(ids.len());
        for s in 0..h.len() {
            ids.push((p, s));
        }
    }
    let n = ids.len();
    let mut delta = vec![f64::NEG_INFINITY; n];
    // (predecessor, entered a new phone)
    let mut back = vec![vec![(NONE, false); n]; t_len];
    // every predecessor reaching the same best value
    let mut tied: Vec<Vec<Vec<(usize, bool)>>> = vec![vec![Vec::new(); n]; t_len];
    for (p, h) in hmms.iter().enumerate() {
        delta[offset[p]] = lm_weight * lm.initial[p] + scores[(0, h.states[0].class)];
    }

    // reconstructs the partial path ending in state `g` at frame `t`
    let trace = |back: &[Vec<(usize, bool)>], t: usize, g: usize| -> Vec<PathStep> {
        let mut path = Vec::with_capacity(t + 1);
        let mut cur = g;
        for tt in (1..=t).rev() {
            let (from, entry) = back[tt][cur];
            let (p, s) = ids[cur];
            path.push(PathStep::new(p, s, entry));
            cur = from;
        }
        let (p, s) = ids[cur];
        path.push(PathStep::new(p, s, true));
        path.reverse();
        path
    };

    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; n];
        for (g, &(p, s)) in ids.iter().enumerate() {
            let state = &hmms[p].states[s];
            let mut cands: Vec<(f64, usize, bool)> = Vec::with_capacity(hmms.len() + 2);
            cands.push((delta[g] + state.self_loop, g, false));
            if s > 0 {
                cands.push((delta[g - 1] + hmms[p].states[s - 1].forward, g - 1, false));
            } else {
                for (q, hq) in hmms.iter().enumerate() {
                    let last = offset[q] + hq.len() - 1;
                    let exit = hq.states[hq.len() - 1].forward;
                    cands.push((delta[last] + (exit + lm_weight * lm.trans[q][p]), last, true));
                }
            }
            let mut best = (f64::NEG_INFINITY, NONE, false);
            let top = cands.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
            if top > f64::NEG_INFINITY {
                tied[t][g] = cands.iter().filter(|c| c.0 == top).map(|c| (c.1, c.2)).collect();
            }
            for (v, from, entry) in cands {
                if v == f64::NEG_INFINITY {
                    continue;
                }
                let better = v > best.0
                    || (v == best.0 && {
                        let mut a = trace(&back, t - 1, from);
                        a.push(PathStep::new(p, s, entry));
                        let mut b = trace(&back, t - 1, best.1);
                        b.push(PathStep::new(p, s, best.2));
                        tie_order(&a, &b) == Ordering::Less
                    });
                if better {
                    best = (v, from, entry);
                }
            }
            next[g] = best.0 + scores[(t, state.class)];
            back[t][g] = (best.1, best.2);
        }
        delta = next;
    }

    let mut best: Option<(f64, usize)> = None;
    for (p, h) in hmms.iter().enumerate() {
        let g = offset[p] + h.len() - 1;
        let v = delta[g];
        if v == f64::NEG_INFINITY {
            continue;
        }
        let better = match best {
            None => true,
            Some((bv, bg)) => v > bv || (v == bv && tie_order(&trace(&back, t_len - 1, g), &trace(&back, t_len - 1, bg)) == Ordering::Less),
        };
        if better {
            best = Some((v, g));
        }
    }
    let (score, g) = best.ok_or_else(|| {
        Error::Decode(format!("no path of {t_len} frames ends in a final state"))
    })?;
    let finals: Vec<usize> = hmms
        .iter()
        .enumerate()
        .map(|(p, h)| offset[p] + h.len() - 1)
        .filter(|&f| delta[f] == score)
        .collect();
    let states = resolve_ties(&tied, &ids, &finals).unwrap_or_else(|| trace(&back, t_len - 1, g));
    Ok(DecodeResult {
        phones: phones_of(&states),
        states,
        score,
    })
}
