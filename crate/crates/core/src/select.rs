//! Top-k selection and the shared zero-count rounding rule.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Orders candidate indices so that higher scores come first and, among equal
/// scores, the smaller index comes first.
fn rank_order(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores checked for NaN")
            .then(a.cmp(&b))
    }
}

/// Indices of the `k` largest scores, in ascending index order.
///
/// Ties are broken towards the smaller flat index, so the result is fully
/// determined by `scores` and `k`.
pub fn topk_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Argument(format!(
            "top-k with k={k} over {} scores",
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN in top-k scores".into()));
    }
    Ok(topk_unchecked(scores, k))
}

/// [`topk_indices`] restricted to `candidates`; the result is sorted.
pub fn topk_among(scores: &[f64], candidates: &[usize], k: usize) -> Result<Vec<usize>> {
    if k > candidates.len() {
        return Err(Error::Argument(format!(
            "top-k with k={k} over {} candidates",
            candidates.len()
        )));
    }
    if candidates.iter().any(|&i| scores[i].is_nan()) {
        return Err(Error::Argument("NaN in top-k scores".into()));
    }
    let mut picked = candidates.to_vec();
    select_front(&mut picked, k, scores);
    Ok(picked)
}

pub(crate) fn topk_unchecked(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    select_front(&mut idx, k, scores);
    idx
}

fn select_front(idx: &mut Vec<usize>, k: usize, scores: &[f64]) {
    if k == 0 {
        idx.clear();
        return;
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, rank_order(scores));
        idx.truncate(k);
    }
    idx.sort_unstable();
}

/// Number of coordinates to zero for `sparsity` over `n` elements:
/// `round(sparsity * n)` with halves rounded up.
pub fn zero_count(sparsity: f64, n: usize) -> usize {
    let z = (sparsity * n as f64 + 0.5).floor();
    (z.max(0.0) as usize).min(n)
}
