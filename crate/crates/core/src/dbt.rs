//! Tree-based training step and the class probabilities of a greedy walk.
//!
//! Moving from `p(i)` to `i` has probability `softmax(−d/σ)` over the
//! parent and all of its children, evaluated at `i`. The log-probability of
//! class `c` is the sum of log transition probabilities along the walk,
//! excluding the final node `s`, plus the log of the total final-step
//! probability of the candidates `W(s) ∪ {s}` (s and its siblings) labelled
//! `c`. The path term does not depend on `c` and vanishes once the
//! distribution is normalised, and so does the shared denominator of the
//! final step. What remains is a soft vote over `W(s) ∪ {s}`, which is all
//! the trainer evaluates. A walk that never leaves the root predicts the
//! root's label with certainty.
//!
//! Two gradient variants exist. `V1` treats the candidates' embeddings as
//! constants and differentiates through the query only; `V2` also
//! differentiates through the candidates' embeddings. The tree's shape is
//! fixed either way, and both variants compute the same loss.

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dbs::{to_f64_rows, StepStats};
use crate::error::{Error, Result};
use crate::metric::{l2, LabeledPoint, Vector};
use crate::nn::{cast, AdamState, Gradients, Network, Scalar};
use crate::softvote::{soft_vote, vote_distribution};
use crate::tree::{BoundaryTree, TraversalTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")))
    }
}

/// Probability of stepping from `p(node)` into `node` for `query`.
pub fn transition_prob(tree: &BoundaryTree, node: usize, query: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if node >= tree.len() {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let parent = tree
        .parent(node)
        .ok_or_else(|| Error::InvalidArgument("the root has no incoming transition".into()))?;
    let d = |i: usize| l2(query, &tree.node(i).point);
    let logits: Vec<f64> = std::iter::once(parent)
        .chain(tree.children(parent).iter().copied())
        .map(|i| -d(i) / sigma)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok((-d(node) / sigma - max).exp() / z)
}

/// `W(s) ∪ {s}` in ascending index order.
pub fn final_candidates(tree: &BoundaryTree, s: usize) -> Vec<usize> {
    let mut c: Vec<usize> = std::iter::once(s).chain(tree.siblings(s)).collect();
    c.sort_unstable();
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassLogProb {
    /// Unnormalised log-probabilities; `−∞` for classes absent from the final step.
    pub log_unnormalized: Vec<f64>,
    /// Normalised distribution.
    pub probs: Vec<f64>,
}

/// Full path-product class log-probabilities for a recorded walk.
pub fn class_log_prob(
    tree: &BoundaryTree,
    trace: &TraversalTrace,
    query: &[f64],
    sigma: f64,
    num_classes: usize,
) -> Result<ClassLogProb> {
    check_sigma(sigma)?;
    let s = trace.final_node;
    let mut log_u = vec![f64::NEG_INFINITY; num_classes];
    if tree.parent(s).is_none() {
        log_u[tree.node(s).label] = 0.0;
    } else {
        let mut prefix = 0.0;
        for &i in trace.visited.iter().filter(|&&i| i != s) {
            prefix += transition_prob(tree, i, query, sigma)?.ln();
        }
        let mut mass = vec![0.0; num_classes];
        for j in final_candidates(tree, s) {
            mass[tree.node(j).label] += transition_prob(tree, j, query, sigma)?;
        }
        for (l, m) in log_u.iter_mut().zip(mass) {
            if m > 0.0 {
                *l = prefix + m.ln();
            }
        }
    }
    let max = log_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_u
        .iter()
        .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() })
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(ClassLogProb { log_unnormalized: log_u, probs: weights.iter().map(|w| w / z).collect() })
}

/// Normalised class distribution from the final step alone.
pub fn final_step_distribution(
    tree: &BoundaryTree,
    s: usize,
    query: &[f64],
    sigma: f64,
    num_classes: usize,
) -> Vec<f64> {
    let cand = final_candidates(tree, s);
    let rows: Vec<&[f64]> = cand.iter().map(|&j| tree.node(j).point.as_slice()).collect();
    let labels: Vec<usize> = cand.iter().map(|&j| tree.node(j).label).collect();
    vote_distribution(query, &rows, &labels, sigma, num_classes)
}

#[derive(Debug, Clone)]
pub struct DbtQueryEval<T> {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub gradients: Gradients<T>,
}

/// Loss of one query against fixed final-step candidates, all embedded at
/// the current parameters. `None` when no candidate has the query's class.
#[allow(clippy::too_many_arguments)]
pub fn dbt_query_objective<T: Scalar>(
    net: &Network<T>,
    query: ArrayView1<'_, T>,
    candidates: ArrayView2<'_, T>,
    candidate_labels: &[usize],
    target: usize,
    sigma: f64,
    num_classes: usize,
    variant: Variant,
) -> Result<Option<DbtQueryEval<T>>> {
    check_sigma(sigma)?;
    if candidates.nrows() != candidate_labels.len() || candidates.nrows() == 0 {
        return Err(Error::InvalidArgument("candidate rows and labels must be non-empty and aligned".into()));
    }
    let x = concatenate(Axis(0), &[query.insert_axis(Axis(0)), candidates])
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (out, tape) = net.forward(x.view())?;
    let emb = to_f64_rows(&out);
    let cand: Vec<&[f64]> = emb[1..].iter().map(|r| r.as_slice()).collect();
    let Some(v) = soft_vote(&emb[0], &cand, candidate_labels, target, sigma, num_classes) else {
        return Ok(None);
    };
    if !v.loss.is_finite() {
        return Err(Error::NonFinite("tree-based loss"));
    }
    let dim = net.output_dim();
    let gradients = match variant {
        Variant::V1 => {
            let g = Array2::from_shape_vec((1, dim), v.d_query.iter().map(|&g| cast::<T>(g)).collect())
                .expect("shape matches");
            net.backward(&tape.select_rows(&[0]), g.view(), false)?.0
        }
        Variant::V2 => {
            let g = Array2::from_shape_vec(
                (emb.len(), dim),
                v.d_query.iter().chain(&v.d_candidates).map(|&g| cast::<T>(g)).collect(),
            )
            .expect("shape matches");
            net.backward(&tape, g.view(), false)?.0
        }
    };
    Ok(Some(DbtQueryEval { loss: v.loss, probs: v.probs, gradients }))
}

/// Builds a tree on the first `n_b` embeddings, then takes one Adam step per
/// remaining point.
///
/// Every embedding and every gradient in the batch is computed at the
/// parameters the batch starts with, so the updates take effect from the next
/// batch on. Each step therefore applies the gradient of
/// [`dbt_query_objective`] at the batch-start parameters. Queries whose class
/// is absent from their final-step candidates are skipped.
#[allow(clippy::too_many_arguments)]
pub fn dbt_step<T: Scalar>(
    net: &mut Network<T>,
    adam: &mut AdamState<T>,
    x: ArrayView2<'_, T>,
    labels: &[usize],
    n_b: usize,
    sigma: f64,
    num_classes: usize,
    variant: Variant,
    lr: f64,
) -> Result<StepStats> {
    check_sigma(sigma)?;
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: labels.len() });
    }
    if n_b == 0 || n_b >= labels.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} cannot hold {n_b} tree points and at least one query",
            labels.len()
        )));
    }
    let frozen = net.clone();
    let (out, tape) = frozen.forward(x)?;
    let emb = to_f64_rows(&out);
    let points = emb[..n_b]
        .iter()
        .zip(labels)
        .map(|(e, &l)| Ok(LabeledPoint::new(Vector::new(e.clone())?, l)))
        .collect::<Result<Vec<_>>>()?;
    let tree = BoundaryTree::build(&points, None)?;
    let dim = net.output_dim();

    let mut total = 0.0;
    let mut contributing = 0;
    for r in n_b..labels.len() {
        let s = tree.traverse(&emb[r])?.final_node;
        let cand = final_candidates(&tree, s);
        let cand_labels: Vec<usize> = cand.iter().map(|&j| labels[j]).collect();
        let rows: Vec<&[f64]> = cand.iter().map(|&j| emb[j].as_slice()).collect();
        let Some(v) = soft_vote(&emb[r], &rows, &cand_labels, labels[r], sigma, num_classes) else {
            continue;
        };
        if !v.loss.is_finite() {
            return Err(Error::NonFinite("tree-based loss"));
        }
        let grads = match variant {
            Variant::V1 => {
                let g = Array2::from_shape_vec((1, dim), v.d_query.iter().map(|&g| cast::<T>(g)).collect())
                    .expect("shape matches");
                frozen.backward(&tape.select_rows(&[r]), g.view(), false)?.0
            }
            Variant::V2 => {
                let picked: Vec<usize> = std::iter::once(r).chain(cand.iter().copied()).collect();
                let g = Array2::from_shape_vec(
                    (picked.len(), dim),
                    v.d_query.iter().chain(&v.d_candidates).map(|&g| cast::<T>(g)).collect(),
                )
                .expect("shape matches");
                frozen.backward(&tape.select_rows(&picked), g.view(), false)?.0
            }
        };
        adam.step(net, &grads, lr)?;
        total += v.loss;
        contributing += 1;
    }
    Ok(StepStats {
        loss: if contributing == 0 { 0.0 } else { total / contributing as f64 },
        structure_size: tree.len(),
        contributing,
        queries: labels.len() - n_b,
    })
}
