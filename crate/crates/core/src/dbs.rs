//! Set-based training step.
//!
//! Each step embeds `N_b + N_t` points, builds a boundary set over the first
//! `N_b` embeddings and scores every remaining point with a soft vote over
//! the whole set. The loss is differentiated through the query embeddings and
//! through the set members' embeddings; which points became members is a
//! discrete choice and is held fixed.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{cast, AdamState, Gradients, Network, Scalar};
use crate::set::select_rows;
use crate::softvote::{soft_vote, vote_distribution};

/// Loss, gradients and diagnostics of one set-based objective evaluation.
#[derive(Debug, Clone)]
pub struct DbsEval<T> {
    /// Mean cross-entropy over contributing queries (0 if there are none).
    pub loss: f64,
    /// Batch positions (within the first `N_b`) that form the set.
    pub members: Vec<usize>,
    /// Queries whose class is represented in the set. Others have infinite
    /// loss and are left out of the mean.
    pub contributing: usize,
    /// Predicted class distribution for every query, in batch order.
    pub probs: Vec<Vec<f64>>,
    pub gradients: Gradients<T>,
}

fn check_batch<T>(x: &ArrayView2<'_, T>, labels: &[usize], n_b: usize, sigma: f64) -> Result<()> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: labels.len() });
    }
    if n_b == 0 || n_b >= labels.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} cannot hold {n_b} set points and at least one query",
            labels.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

pub(crate) fn to_f64_rows<T: Scalar>(a: &Array2<T>) -> Vec<Vec<f64>> {
    a.outer_iter()
        .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect()
}

/// Evaluates the objective. The set is built from the embeddings unless
/// `members` fixes it, which is how finite-difference checks hold the
/// structure constant.
pub fn dbs_objective<T: Scalar>(
    net: &Network<T>,
    x: ArrayView2<'_, T>,
    labels: &[usize],
    n_b: usize,
    sigma: f64,
    num_classes: usize,
    members: Option<&[usize]>,
) -> Result<DbsEval<T>> {
    check_batch(&x, labels, n_b, sigma)?;
    let (out, tape) = net.forward(x)?;
    let emb = to_f64_rows(&out);

    let members = match members {
        Some(m) => {
            if m.is_empty() || m.iter().any(|&i| i >= n_b) {
                return Err(Error::InvalidArgument("set members must index the first N_b rows".into()));
            }
            m.to_vec()
        }
        None => {
            let rows: Vec<&[f64]> = emb[..n_b].iter().map(|r| r.as_slice()).collect();
            select_rows(&rows, &labels[..n_b])
        }
    };
    let cand: Vec<&[f64]> = members.iter().map(|&i| emb[i].as_slice()).collect();
    let cand_labels: Vec<usize> = members.iter().map(|&i| labels[i]).collect();

    let dim = net.output_dim();
    let n_q = labels.len() - n_b;
    let mut total = 0.0;
    let mut contributing = 0;
    let mut probs = Vec::with_capacity(n_q);
    // rows: members first, then queries
    let mut d_out = vec![0.0f64; (members.len() + n_q) * dim];
    for (qi, r) in (n_b..labels.len()).enumerate() {
        let Some(v) = soft_vote(&emb[r], &cand, &cand_labels, labels[r], sigma, num_classes) else {
            probs.push(vote_distribution(&emb[r], &cand, &cand_labels, sigma, num_classes));
            continue;
        };
        total += v.loss;
        contributing += 1;
        for (j, g) in v.d_candidates.chunks_exact(dim).enumerate() {
            for (acc, g) in d_out[j * dim..(j + 1) * dim].iter_mut().zip(g) {
                *acc += g;
            }
        }
        let row = members.len() + qi;
        for (acc, g) in d_out[row * dim..(row + 1) * dim].iter_mut().zip(&v.d_query) {
            *acc += g;
        }
        probs.push(v.probs);
    }

    let gradients = if contributing == 0 {
        Gradients::zeros_like(net)
    } else {
        let scale = 1.0 / contributing as f64;
        let rows: Vec<usize> = members.iter().copied().chain(n_b..labels.len()).collect();
        let grad = Array2::from_shape_vec(
            (rows.len(), dim),
            d_out.iter().map(|&g| cast::<T>(g * scale)).collect(),
        )
        .expect("shape matches");
        net.backward(&tape.select_rows(&rows), grad.view(), false)?.0
    };
    let loss = if contributing == 0 { 0.0 } else { total / contributing as f64 };
    if !loss.is_finite() {
        return Err(Error::NonFinite("set-based loss"));
    }
    Ok(DbsEval { loss, members, contributing, probs, gradients })
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Set size, or final-tree size for tree-based steps.
    pub structure_size: usize,
    pub contributing: usize,
    pub queries: usize,
}

/// Evaluates the objective on a batch and applies one Adam update. Steps
/// where no query can be scored leave the parameters and optimizer untouched.
#[allow(clippy::too_many_arguments)]
pub fn dbs_step<T: Scalar>(
    net: &mut Network<T>,
    adam: &mut AdamState<T>,
    x: ArrayView2<'_, T>,
    labels: &[usize],
    n_b: usize,
    sigma: f64,
    num_classes: usize,
    lr: f64,
) -> Result<StepStats> {
    let eval = dbs_objective(net, x, labels, n_b, sigma, num_classes, None)?;
    if eval.contributing > 0 {
        adam.step(net, &eval.gradients, lr)?;
    }
    Ok(StepStats {
        loss: eval.loss,
        structure_size: eval.members.len(),
        contributing: eval.contributing,
        queries: labels.len() - n_b,
    })
}
