//! Embedding, final structures and test-error evaluation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metric::{LabeledPoint, Vector};
use crate::nn::Network;
use crate::rng::{stream, Stream};
use crate::tree::{BoundaryForest, BoundaryTree};

const CHUNK: usize = 2048;

/// Embeds every row of `x` with frozen parameters.
pub fn embed(net: &Network<f32>, x: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
    Ok(net.predict_chunked(x, CHUNK)?.mapv(f64::from))
}

pub fn labeled_embeddings(emb: &Array2<f64>, labels: &[usize]) -> Result<Vec<LabeledPoint>> {
    emb.outer_iter()
        .zip(labels)
        .map(|(row, &l)| Ok(LabeledPoint::new(Vector::from_view(row)?, l)))
        .collect()
}

/// Misclassification count over a test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorCount {
    pub wrong: usize,
    pub total: usize,
}

impl ErrorCount {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.wrong as f64 / self.total as f64
        }
    }
}

fn count(predictions: impl Iterator<Item = Result<usize>>, labels: &[usize]) -> Result<ErrorCount> {
    let mut wrong = 0;
    for (p, &y) in predictions.zip(labels) {
        if p? != y {
            wrong += 1;
        }
    }
    Ok(ErrorCount { wrong, total: labels.len() })
}

/// Builds a tree over the embedded dataset. With a seed the insertion order
/// is shuffled, otherwise dataset order is used.
pub fn finalize_tree(
    net: &Network<f32>,
    data: &Dataset,
    max_children: Option<usize>,
    shuffle_seed: Option<u64>,
) -> Result<BoundaryTree> {
    check_input(net, data)?;
    let points = labeled_embeddings(&embed(net, data.features.view())?, &data.labels)?;
    match shuffle_seed {
        None => BoundaryTree::build(&points, max_children),
        Some(seed) => {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.shuffle(&mut stream(seed, Stream::Forest));
            BoundaryTree::build(order.iter().map(|&i| &points[i]), max_children)
        }
    }
}

/// A forest over the embedded dataset; tree 0 uses dataset order.
pub fn finalize_forest(
    net: &Network<f32>,
    data: &Dataset,
    num_trees: usize,
    max_children: Option<usize>,
    seed: u64,
) -> Result<BoundaryForest> {
    check_input(net, data)?;
    let points = labeled_embeddings(&embed(net, data.features.view())?, &data.labels)?;
    BoundaryForest::build(&points, num_trees, max_children, seed)
}

pub fn tree_error(tree: &BoundaryTree, net: &Network<f32>, test: &Dataset) -> Result<ErrorCount> {
    check_input(net, test)?;
    let emb = embed(net, test.features.view())?;
    count(emb.outer_iter().map(|r| tree.classify(r.as_slice().expect("contiguous"))), &test.labels)
}

pub fn forest_error(forest: &BoundaryForest, net: &Network<f32>, test: &Dataset) -> Result<ErrorCount> {
    check_input(net, test)?;
    let emb = embed(net, test.features.view())?;
    count(emb.outer_iter().map(|r| forest.classify(r.as_slice().expect("contiguous"))), &test.labels)
}

/// Error of a plain classifier: argmax over the network's outputs, lowest
/// class on ties.
pub fn classifier_error(net: &Network<f32>, test: &Dataset) -> Result<ErrorCount> {
    check_input(net, test)?;
    if net.output_dim() != test.num_classes {
        return Err(Error::DimensionMismatch { expected: test.num_classes, found: net.output_dim() });
    }
    let out = net.predict_chunked(test.features.view(), CHUNK)?;
    count(out.axis_iter(Axis(0)).map(|r| Ok(argmax(r.as_slice().expect("contiguous")))), &test.labels)
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_input(net: &Network<f32>, data: &Dataset) -> Result<()> {
    if net.input_dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), found: data.dim() });
    }
    Ok(())
}
