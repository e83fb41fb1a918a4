//! Cross-entropy of a softmax-weighted label vote and its gradient with
//! respect to every point involved.
//!
//! The vote over candidates `j` is `ŷ(c) = Σ_j h_j [y_j = c]` with
//! `h = softmax(−d/σ)` and `d_j = ‖q − e_j‖`. Both trainers share it: the
//! set-based trainer votes over the whole boundary set, the tree-based one
//! over the final node and its siblings.

use crate::metric::{closeness_weights, l2};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftVote {
    /// `−log ŷ(target)`.
    pub loss: f64,
    /// `ŷ` over all classes.
    pub probs: Vec<f64>,
    /// `∂loss/∂q`.
    pub d_query: Vec<f64>,
    /// `∂loss/∂e_j`, one row per candidate, row-major.
    pub d_candidates: Vec<f64>,
}

/// Returns `None` when no candidate carries `target`, where the loss is
/// infinite and the gradient undefined.
///
/// The distance gradient at `d_j = 0` is taken as zero.
pub fn soft_vote(
    query: &[f64],
    candidates: &[&[f64]],
    labels: &[usize],
    target: usize,
    sigma: f64,
    num_classes: usize,
) -> Option<SoftVote> {
    debug_assert_eq!(candidates.len(), labels.len());
    debug_assert!(sigma > 0.0);
    let dim = query.len();
    let distances: Vec<f64> = candidates.iter().map(|c| l2(query, c)).collect();
    let logits: Vec<f64> = distances.iter().map(|d| -d / sigma).collect();

    let lse = |keep: &dyn Fn(usize) -> bool| -> Option<f64> {
        let max = (0..logits.len())
            .filter(|&j| keep(j))
            .map(|j| logits[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return None;
        }
        let s: f64 = (0..logits.len())
            .filter(|&j| keep(j))
            .map(|j| (logits[j] - max).exp())
            .sum();
        Some(max + s.ln())
    };
    let lse_all = lse(&|_| true)?;
    let lse_target = lse(&|j| labels[j] == target)?;
    let loss = lse_all - lse_target;

    let mut probs = vec![0.0; num_classes];
    let mut d_query = vec![0.0; dim];
    let mut d_candidates = vec![0.0; candidates.len() * dim];
    for (j, cand) in candidates.iter().enumerate() {
        let h = (logits[j] - lse_all).exp();
        probs[labels[j]] += h;
        // ∂loss/∂z_j = h_j − [y_j = target]·h_j/ŷ(target)
        let mut d_logit = h;
        if labels[j] == target {
            d_logit -= (logits[j] - lse_target).exp();
        }
        let dist = distances[j];
        if dist == 0.0 || d_logit == 0.0 {
            continue;
        }
        // z = −d/σ and ∂d/∂q = (q − e)/d
        let scale = -d_logit / (sigma * dist);
        let row = &mut d_candidates[j * dim..(j + 1) * dim];
        for k in 0..dim {
            let g = scale * (query[k] - cand[k]);
            d_query[k] += g;
            row[k] -= g;
        }
    }
    Some(SoftVote {
        loss,
        probs,
        d_query,
        d_candidates,
    })
}

/// The vote `ŷ` alone, defined even when `target` has no candidate.
pub fn vote_distribution(
    query: &[f64],
    candidates: &[&[f64]],
    labels: &[usize],
    sigma: f64,
    num_classes: usize,
) -> Vec<f64> {
    let distances: Vec<f64> = candidates.iter().map(|c| l2(query, c)).collect();
    let mut probs = vec![0.0; num_classes];
    for (h, &label) in closeness_weights(&distances, sigma).into_iter().zip(labels) {
        probs[label] += h;
    }
    probs
}
