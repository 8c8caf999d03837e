use crate::error::{Error, Result};

/// Phone error rate with the error breakdown of one minimal alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerResult {
    /// Percent, `100 (S + D + I) / N`.
    pub per: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl PerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein alignment of `hypothesis` against `reference`.
/// Among minimal alignments, the one with the most substitutions is reported.
pub fn per<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<PerResult> {
    if reference.is_empty() {
        return Err(Error::Scoring("reference transcript is empty".into()));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    // (edits, insertions): fewest insertions among minimal alignments is the
    // same as most substitutions, since D - I is fixed by the lengths
    let mut d = vec![vec![(0usize, 0usize); m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = (i, 0);
    }
    for j in 0..=m {
        d[0][j] = (j, j);
    }
    for i in 1..=n {
        for j in 1..=m {
            let (c, k) = d[i - 1][j - 1];
            let sub = (c + usize::from(reference[i - 1] != hypothesis[j - 1]), k);
            let del = (d[i - 1][j].0 + 1, d[i - 1][j].1);
            let ins = (d[i][j - 1].0 + 1, d[i][j - 1].1 + 1);
            d[i][j] = sub.min(del).min(ins);
        }
    }

    let (mut s, mut del, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let miss = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let (c, k) = d[i - 1][j - 1];
            if (c + miss, k) == d[i][j] {
                s += miss;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && (d[i - 1][j].0 + 1, d[i - 1][j].1) == d[i][j] {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    debug_assert_eq!((s + del + ins, ins), d[n][m]);
    Ok(PerResult {
        per: 100.0 * (s + del + ins) as f64 / n as f64,
        substitutions: s,
        deletions: del,
        insertions: ins,
        ref_len: n,
    })
}
