//! Boundary sets: the flat counterpart of a boundary tree.
//!
//! Points are offered in order; a point is kept when its exact nearest member
//! carries a different label. Queries are exact nearest-neighbour scans.

use crate::error::{Error, Result};
use crate::metric::{argmin_by, brute_force_nn, closeness_weights, l2, LabeledPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    members: Vec<LabeledPoint>,
}

impl BoundarySet {
    pub fn build<'a, I>(data: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabeledPoint>,
    {
        let mut members: Vec<LabeledPoint> = Vec::new();
        for p in data {
            if let Some(first) = members.first() {
                if first.point.dim() != p.point.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: first.point.dim(),
                        found: p.point.dim(),
                    });
                }
            }
            if keeps(&members, &p.point, p.label) {
                members.push(p.clone());
            }
        }
        if members.is_empty() {
            return Err(Error::Empty("training sequence"));
        }
        Ok(Self { members })
    }

    pub fn from_members(members: Vec<LabeledPoint>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("boundary set"));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[LabeledPoint] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].point.dim()
    }

    /// Exact nearest member, lowest index on ties.
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        brute_force_nn(query, &self.members)
    }

    /// Class distribution `h·Y`, where `h` is the softmax of `−d/σ` over all
    /// members and `Y` their one-hot labels.
    pub fn predict(&self, query: &[f64], sigma: f64, num_classes: usize) -> Result<Vec<f64>> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        let distances: Vec<f64> = self.members.iter().map(|m| l2(query, &m.point)).collect();
        let weights = closeness_weights(&distances, sigma);
        let mut probs = vec![0.0; num_classes];
        for (m, w) in self.members.iter().zip(weights) {
            m.check_label(num_classes)?;
            probs[m.label] += w;
        }
        Ok(probs)
    }
}

fn keeps(members: &[LabeledPoint], point: &[f64], label: usize) -> bool {
    match argmin_by(members.iter().map(|m| l2(point, &m.point))) {
        None => true,
        Some((nn, _)) => members[nn].label != label,
    }
}

/// Boundary-set selection over the rows of an embedding matrix: returns the
/// positions (in `rows`) that would be kept.
pub(crate) fn select_rows(rows: &[&[f64]], labels: &[usize]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, (row, &label)) in rows.iter().zip(labels).enumerate() {
        let nn = argmin_by(kept.iter().map(|&k| l2(row, rows[k])));
        match nn {
            Some((pos, _)) if labels[kept[pos]] == label => {}
            _ => kept.push(i),
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;

    fn lp(x: f64, label: usize) -> LabeledPoint {
        LabeledPoint::from_slice(&[x], label).unwrap()
    }

    #[test]
    fn build_examples() {
        let s = BoundarySet::build(&[lp(0.0, A), lp(1.0, A), lp(2.0, B)]).unwrap();
        assert_eq!(s.members(), &[lp(0.0, A), lp(2.0, B)]);
        let same: Vec<_> = (0..7).map(|i| lp(i as f64, A)).collect();
        assert_eq!(BoundarySet::build(&same).unwrap().len(), 1);
        assert!(BoundarySet::build(&[]).is_err());
    }

    #[test]
    fn alternating_sequence_keeps_everything() {
        // Each new point lands closest to the most recent, opposite-labelled member.
        let data = [lp(0.0, A), lp(10.0, B), lp(9.0, A), lp(8.5, B), lp(8.6, A)];
        let s = BoundarySet::build(&data).unwrap();
        assert_eq!(s.len(), data.len());
    }

    #[test]
    fn nearest_examples() {
        let s = BoundarySet::from_members(vec![lp(1.0, A), lp(-0.5, B), lp(3.0, A)]).unwrap();
        assert_eq!(s.nearest(&[0.0]).unwrap(), (1, 0.5));
        assert_eq!(s.nearest(&[3.0]).unwrap(), (2, 0.0));
        let tied = BoundarySet::from_members(vec![lp(1.0, A), lp(-1.0, B)]).unwrap();
        assert_eq!(tied.nearest(&[0.0]).unwrap().0, 0);
        assert!(BoundarySet::from_members(vec![]).is_err());
    }

    #[test]
    fn predict_examples() {
        let single = BoundarySet::from_members(vec![lp(4.0, 2)]).unwrap();
        assert_eq!(single.predict(&[0.0], 1.0, 3).unwrap(), vec![0.0, 0.0, 1.0]);

        let pair = BoundarySet::from_members(vec![lp(-1.0, A), lp(1.0, B)]).unwrap();
        assert_eq!(pair.predict(&[0.0], 1.0, 4).unwrap(), vec![0.5, 0.5, 0.0, 0.0]);

        let s = BoundarySet::from_members(vec![lp(0.0, A), lp(3f64.ln(), B)]).unwrap();
        let p = s.predict(&[0.0], 1.0, 2).unwrap();
        assert_relative_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.25, epsilon = 1e-12);

        assert!(pair.predict(&[0.0], 0.0, 2).is_err());
        assert!(pair.predict(&[0.0, 1.0], 1.0, 2).is_err());
    }

    #[test]
    fn select_rows_matches_build() {
        let data = [lp(0.0, A), lp(1.0, A), lp(2.0, B), lp(1.4, A), lp(1.6, B)];
        let rows: Vec<&[f64]> = data.iter().map(|p| p.point.as_slice()).collect();
        let labels: Vec<usize> = data.iter().map(|p| p.label).collect();
        let kept = select_rows(&rows, &labels);
        let built = BoundarySet::build(&data).unwrap();
        let via_rows: Vec<_> = kept.iter().map(|&i| data[i].clone()).collect();
        assert_eq!(built.members(), via_rows.as_slice());
    }

    fn members() -> impl Strategy<Value = Vec<LabeledPoint>> {
        (1usize..5).prop_flat_map(|dim| {
            prop::collection::vec((prop::collection::vec(-5.0f64..5.0, dim), 0usize..3), 1..25)
                .prop_map(|v| {
                    v.into_iter()
                        .map(|(x, y)| LabeledPoint::from_slice(&x, y).unwrap())
                        .collect()
                })
        })
    }

    proptest! {
        #[test]
        fn predict_is_distribution_and_permutation_invariant(m in members(), seed in any::<u64>(), sigma in 0.05f64..5.0) {
            let dim = m[0].point.dim();
            let q: Vec<f64> = (0..dim).map(|i| ((seed >> (i * 8)) & 0xff) as f64 / 25.0 - 5.0).collect();
            let s = BoundarySet::from_members(m.clone()).unwrap();
            let p = s.predict(&q, sigma, 3).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let mut rev = m;
            rev.reverse();
            let r = BoundarySet::from_members(rev).unwrap().predict(&q, sigma, 3).unwrap();
            for (x, y) in p.iter().zip(&r) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn sharp_sigma_predicts_nearest_label(m in members(), q in prop::collection::vec(-5.0f64..5.0, 4)) {
            let s = BoundarySet::from_members(m).unwrap();
            let q = &q[..s.dim()];
            let mut d: Vec<f64> = s.members().iter().map(|x| l2(q, &x.point)).collect();
            d.sort_by(f64::total_cmp);
            prop_assume!(d.len() < 2 || d[1] - d[0] > 1e-3);
            let (nn, _) = s.nearest(q).unwrap();
            let p = s.predict(q, 1e-6, 3).unwrap();
            let argmax = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            prop_assert_eq!(argmax, s.members()[nn].label);
        }

        #[test]
        fn build_replay_property(data in members()) {
            let s = BoundarySet::build(&data).unwrap();
            prop_assert_eq!(&s.members()[0], &data[0]);
            // Replay: every kept member had a differently labelled nearest
            // neighbour among the members kept before it.
            for k in 1..s.len() {
                let (nn, _) = brute_force_nn(&s.members()[k].point, &s.members()[..k]).unwrap();
                prop_assert_ne!(s.members()[nn].label, s.members()[k].label);
            }
        }
    }
}
