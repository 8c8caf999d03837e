//! Exhaustive path enumeration; the reference the Viterbi search is checked
//! against.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

use super::viterbi::{phones_of, tie_order, validate, DecodeResult, PathStep};
use super::{BigramLm, PhoneHmm};

pub const MAX_BRUTE_FORCE_PATHS: u128 = 10_000_000;

/// Number of legal complete paths of `frames` frames.
pub fn count_paths(hmms: &[PhoneHmm], frames: usize) -> u128 {
    // ways[p][s]: partial paths ending in (p, s)
    let mut ways: Vec<Vec<u128>> = hmms
        .iter()
        .map(|h| {
            let mut v = vec![0u128; h.len()];
            v[0] = 1;
            v
        })
        .collect();
    for _ in 1..frames {
        let exits: u128 = ways.iter().map(|w| w[w.len() - 1]).sum();
        let next = ways
            .iter()
            .map(|w| {
                (0..w.len())
                    .map(|s| {
                        let incoming = if s == 0 { exits } else { w[s - 1] };
                        w[s].saturating_add(incoming)
                    })
                    .collect()
            })
            .collect();
        ways = next;
    }
    ways.iter().map(|w| w[w.len() - 1]).sum()
}

/// Enumerates every legal path and returns the best, breaking exact score
/// ties by the smaller phone sequence, then the smaller state path.
pub fn brute_force_decode(scores: &Matrix, hmms: &[PhoneHmm], lm: &BigramLm, lm_weight: f64) -> Result<DecodeResult> {
    validate(scores, hmms, lm)?;
    let t_len = scores.rows();
    let total = count_paths(hmms, t_len);
    if total > MAX_BRUTE_FORCE_PATHS {
        return Err(Error::Oracle(format!("{total} paths exceed the brute-force limit")));
    }
    let mut best: Option<(f64, Vec<PathStep>)> = None;
    let mut path = Vec::with_capacity(t_len);
    for p in 0..hmms.len() {
        path.push(PathStep::new(p, 0, true));
        let score = lm_weight * lm.initial[p] + scores[(0, hmms[p].states[0].class)];
        extend(scores, hmms, lm, lm_weight, &mut path, score, &mut best);
        path.pop();
    }
    let (score, states) =
        best.ok_or_else(|| Error::Decode(format!("no path of {t_len} frames ends in a final state")))?;
    Ok(DecodeResult {
        phones: phones_of(&states),
        states,
        score,
    })
}

fn extend(
    scores: &Matrix,
    hmms: &[PhoneHmm],
    lm: &BigramLm,
    lm_weight: f64,
    path: &mut Vec<PathStep>,
    score: f64,
    best: &mut Option<(f64, Vec<PathStep>)>,
) {
    let t = path.len();
    let PathStep { phone: p, state: s, .. } = path[t - 1];
    let state = hmms[p].states[s];
    if t == scores.rows() {
        if s + 1 == hmms[p].len() {
            let better = match best {
                None => true,
                Some((bs, bp)) => score > *bs || (score == *bs && tie_order(path, bp) == Ordering::Less),
            };
            if better {
                *best = Some((score, path.clone()));
            }
        }
        return;
    }
    let mut moves: Vec<(PathStep, f64)> = vec![(PathStep::new(p, s, false), state.self_loop)];
    if s + 1 < hmms[p].len() {
        moves.push((PathStep::new(p, s + 1, false), state.forward));
    } else {
        for q in 0..hmms.len() {
            moves.push((PathStep::new(q, 0, true), state.forward + lm_weight * lm.trans[p][q]));
        }
    }
    for (step_to, step) in moves {
        path.push(step_to);
        let next = score + step + scores[(t, hmms[step_to.phone].states[step_to.state].class)];
        extend(scores, hmms, lm, lm_weight, path, next, best);
        path.pop();
    }
}
