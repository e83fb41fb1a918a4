//! Dense vectors, Euclidean distances and brute-force nearest-neighbour search.
//!
//! All distances here are the unsquared L2 norm. [`Distance::SquaredEuclidean`]
//! exists for callers that only need an argmin, which both variants share.

use std::ops::Deref;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("vector"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Self(data))
    }

    pub fn from_view(view: ArrayView1<'_, f64>) -> Result<Self> {
        Self::new(view.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        Self::new(data)
    }
}

/// A point together with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub point: Vector,
    pub label: usize,
}

impl LabeledPoint {
    pub fn new(point: Vector, label: usize) -> Self {
        Self { point, label }
    }

    /// Convenience constructor, mostly for tests and examples.
    pub fn from_slice(coords: &[f64], label: usize) -> Result<Self> {
        Ok(Self::new(Vector::new(coords.to_vec())?, label))
    }

    /// Checks `label < num_classes`.
    pub fn check_label(&self, num_classes: usize) -> Result<()> {
        if self.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: self.label,
                classes: num_classes,
            });
        }
        Ok(())
    }
}

/// Row-major matrix of query-to-reference distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

impl Distance {
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let sq = squared_euclidean(a, b);
        match self {
            Distance::Euclidean => sq.sqrt(),
            Distance::SquaredEuclidean => sq,
        }
    }
}

/// Sum of squared coordinate differences, accumulated left to right.
#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Unchecked L2 distance for hot loops where dimensions are known to agree.
#[inline]
pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `‖a − b‖₂`. Symmetric bit-for-bit since `(x − y)²` equals `(y − x)²`.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(l2(a, b))
}

/// All query-to-reference distances. Each row is produced independently with
/// the same accumulation order as [`euclidean_distance`].
pub fn pairwise_distances(queries: &[Vector], refs: &[Vector]) -> Result<DistanceMatrix> {
    pairwise_distances_with(queries, refs, Distance::Euclidean)
}

pub fn pairwise_distances_with(
    queries: &[Vector],
    refs: &[Vector],
    distance: Distance,
) -> Result<DistanceMatrix> {
    let first = refs.first().ok_or(Error::Empty("reference set"))?;
    let dim = first.dim();
    for v in refs.iter().chain(queries) {
        check_dims(dim, v.dim())?;
    }
    let mut values = Vec::with_capacity(queries.len() * refs.len());
    for q in queries {
        values.extend(refs.iter().map(|r| distance.eval(q, r)));
    }
    Ok(DistanceMatrix {
        rows: queries.len(),
        cols: refs.len(),
        values,
    })
}

/// Same as [`pairwise_distances`] over the rows of two matrices.
pub fn pairwise_distances_matrix(
    queries: ArrayView2<'_, f64>,
    refs: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if refs.nrows() == 0 {
        return Err(Error::Empty("reference set"));
    }
    check_dims(refs.ncols(), queries.ncols())?;
    let mut out = Array2::zeros((queries.nrows(), refs.nrows()));
    for (q, mut out_row) in queries.outer_iter().zip(out.outer_iter_mut()) {
        for (r, o) in refs.outer_iter().zip(out_row.iter_mut()) {
            *o = q.iter().zip(r.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    Ok(out)
}

/// Softmax of `−d/σ` with max-subtraction.
///
/// Panics if `distances` is empty or `sigma` is not positive.
pub fn closeness_weights(distances: &[f64], sigma: f64) -> Vec<f64> {
    assert!(!distances.is_empty(), "closeness_weights: empty row");
    assert!(sigma > 0.0, "closeness_weights: sigma must be positive");
    // max of −d/σ is attained at the smallest distance
    let min_d = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = distances
        .iter()
        .map(|&d| (-(d - min_d) / sigma).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Index and distance of the reference closest to `query`; ties go to the
/// lowest index.
pub fn brute_force_nn(query: &[f64], refs: &[LabeledPoint]) -> Result<(usize, f64)> {
    if refs.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    for r in refs {
        check_dims(query.len(), r.point.dim())?;
    }
    Ok(argmin_by(refs.iter().map(|r| l2(query, &r.point))).expect("nonempty"))
}

/// Position and value of the smallest item, first occurrence on ties.
pub(crate) fn argmin_by(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}
