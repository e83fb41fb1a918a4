//! Boundary trees and boundary forests.
//!
//! A boundary tree stores a subset of the points it is offered. Queries walk
//! greedily from the root: at each node the node itself and its children are
//! compared, and the walk moves into the closest child or stops when the node
//! is closest. A point is stored (as a child of the node the walk stopped at)
//! only when that node carries a different label, so every edge joins two
//! differently labelled nodes.
//!
//! When `max_children` is set, a node that already has that many children is
//! left out of the comparison, forcing the walk one level deeper. Because of
//! that, the walk never stops on a saturated node and insertion can always
//! attach to the final node.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metric::{l2, LabeledPoint};
use crate::rng::{stream, Stream};

/// One comparison made during a traversal: the walk was at `from` and chose
/// `chosen` among `candidates`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalStep {
    pub from: usize,
    /// Node indices compared at this step, in ascending index order.
    pub candidates: Vec<usize>,
    /// Distance from the query to each candidate, aligned with `candidates`.
    pub distances: Vec<f64>,
    pub chosen: usize,
}

/// Record of a greedy walk.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalTrace {
    /// Nodes entered from their parent, in order. Empty when the walk stops at the root.
    pub visited: Vec<usize>,
    pub final_node: usize,
    pub steps: Vec<TraversalStep>,
}

#[derive(Debug, Clone)]
pub struct BoundaryTree {
    nodes: Vec<LabeledPoint>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    max_children: Option<usize>,
    dim: Option<usize>,
}

impl BoundaryTree {
    /// An empty tree. `max_children = None` means unlimited.
    pub fn new(max_children: Option<usize>) -> Result<Self> {
        if max_children == Some(0) {
            return Err(Error::InvalidConfig("max_children must be positive".into()));
        }
        Ok(Self {
            nodes: Vec::new(),
            parent: Vec::new(),
            children: Vec::new(),
            max_children,
            dim: None,
        })
    }

    /// Builds a tree by offering `data` in order; the first element is the root.
    pub fn build<'a, I>(data: I, max_children: Option<usize>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabeledPoint>,
    {
        let mut tree = Self::new(max_children)?;
        for p in data {
            tree.insert(p.clone())?;
        }
        if tree.is_empty() {
            return Err(Error::Empty("training sequence"));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn max_children(&self) -> Option<usize> {
        self.max_children
    }

    pub fn node(&self, index: usize) -> &LabeledPoint {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> &[LabeledPoint] {
        &self.nodes
    }

    pub fn parent(&self, index: usize) -> Option<usize> {
        self.parent[index]
    }

    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index]
    }

    /// Siblings of `index`, excluding `index` itself.
    pub fn siblings(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent[index]
            .map(|p| self.children[p].as_slice())
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(move |&c| c != index)
    }

    fn is_saturated(&self, index: usize) -> bool {
        self.max_children
            .is_some_and(|cap| self.children[index].len() >= cap)
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        match self.dim {
            None => Err(Error::Empty("boundary tree")),
            Some(d) if d != query.len() => Err(Error::DimensionMismatch {
                expected: d,
                found: query.len(),
            }),
            Some(_) => Ok(()),
        }
    }

    /// Greedy walk from the root, recording every comparison.
    pub fn traverse(&self, query: &[f64]) -> Result<TraversalTrace> {
        self.check_query(query)?;
        let mut current = 0;
        let mut visited = Vec::new();
        let mut steps = Vec::new();
        loop {
            let kids = &self.children[current];
            if kids.is_empty() {
                break;
            }
            let mut candidates = Vec::with_capacity(kids.len() + 1);
            if !self.is_saturated(current) {
                candidates.push(current);
            }
            candidates.extend_from_slice(kids);
            let distances: Vec<f64> = candidates
                .iter()
                .map(|&c| l2(query, &self.nodes[c].point))
                .collect();
            // Candidates are in ascending index order, so the first minimum
            // is the lowest-index one.
            let mut best = 0;
            for (k, &d) in distances.iter().enumerate().skip(1) {
                if d < distances[best] {
                    best = k;
                }
            }
            let chosen = candidates[best];
            steps.push(TraversalStep {
                from: current,
                candidates,
                distances,
                chosen,
            });
            if chosen == current {
                break;
            }
            visited.push(chosen);
            current = chosen;
        }
        Ok(TraversalTrace {
            visited,
            final_node: current,
            steps,
        })
    }

    /// Final node of the greedy walk, without bookkeeping.
    pub fn search(&self, query: &[f64]) -> Result<usize> {
        self.check_query(query)?;
        let mut current = 0;
        loop {
            let kids = &self.children[current];
            if kids.is_empty() {
                return Ok(current);
            }
            let (mut best, mut best_d) = if self.is_saturated(current) {
                (usize::MAX, f64::INFINITY)
            } else {
                (current, l2(query, &self.nodes[current].point))
            };
            for &c in kids {
                let d = l2(query, &self.nodes[c].point);
                if d < best_d || best == usize::MAX {
                    best = c;
                    best_d = d;
                }
            }
            if best == current {
                return Ok(current);
            }
            current = best;
        }
    }

    /// Offers `p` to the tree. Returns whether it was stored.
    pub fn insert(&mut self, p: LabeledPoint) -> Result<bool> {
        if self.nodes.is_empty() {
            self.dim = Some(p.point.dim());
            self.push_node(p, None);
            return Ok(true);
        }
        let final_node = self.search(&p.point)?;
        if self.nodes[final_node].label == p.label {
            return Ok(false);
        }
        self.push_node(p, Some(final_node));
        Ok(true)
    }

    fn push_node(&mut self, p: LabeledPoint, parent: Option<usize>) {
        let index = self.nodes.len();
        self.nodes.push(p);
        self.parent.push(parent);
        self.children.push(Vec::new());
        if let Some(parent) = parent {
            self.children[parent].push(index);
        }
    }

    /// Label of the node the greedy walk ends at.
    pub fn classify(&self, query: &[f64]) -> Result<usize> {
        Ok(self.nodes[self.search(query)?].label)
    }

    /// Parent-to-child pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|p| (p, child)))
    }

    /// Rebuilds a tree from stored records. Records must be in index order,
    /// with every parent preceding its children.
    pub fn from_parts(
        nodes: Vec<LabeledPoint>,
        parent: Vec<Option<usize>>,
        max_children: Option<usize>,
    ) -> Result<Self> {
        if nodes.len() != parent.len() {
            return Err(Error::Format("node and parent counts differ".into()));
        }
        let mut tree = Self::new(max_children)?;
        for (i, (node, p)) in nodes.into_iter().zip(parent).enumerate() {
            match (i, p) {
                (0, None) => tree.dim = Some(node.point.dim()),
                (0, Some(_)) => return Err(Error::Format("root has a parent".into())),
                (_, None) => return Err(Error::Format(format!("node {i} has no parent"))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::Format(format!("node {i} precedes its parent {p}")))
                }
                _ => {}
            }
            if Some(node.point.dim()) != tree.dim {
                return Err(Error::Format(format!("node {i} has a different dimension")));
            }
            tree.push_node(node, p);
        }
        if let Some(cap) = max_children {
            if tree.children.iter().any(|c| c.len() > cap) {
                return Err(Error::Format("node exceeds max_children".into()));
            }
        }
        Ok(tree)
    }
}

/// Ensemble of boundary trees over different orderings of the same data.
#[derive(Debug, Clone)]
pub struct BoundaryForest {
    trees: Vec<BoundaryTree>,
}

impl BoundaryForest {
    /// The first tree uses `data` in the given order; each further tree uses
    /// a shuffle drawn from `seed`.
    pub fn build(
        data: &[LabeledPoint],
        num_trees: usize,
        max_children: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if num_trees == 0 {
            return Err(Error::InvalidConfig("forest needs at least one tree".into()));
        }
        let mut rng = stream(seed, Stream::Forest);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut trees = Vec::with_capacity(num_trees);
        trees.push(BoundaryTree::build(data, max_children)?);
        for _ in 1..num_trees {
            order.shuffle(&mut rng);
            trees.push(BoundaryTree::build(
                order.iter().map(|&i| &data[i]),
                max_children,
            )?);
        }
        Self::from_trees(trees)
    }

    pub fn from_trees(trees: Vec<BoundaryTree>) -> Result<Self> {
        let first = trees.first().ok_or(Error::Empty("boundary forest"))?;
        if let Some(t) = trees.iter().find(|t| t.dim() != first.dim()) {
            return Err(Error::DimensionMismatch {
                expected: first.dim().unwrap_or(0),
                found: t.dim().unwrap_or(0),
            });
        }
        Ok(Self { trees })
    }

    pub fn trees(&self) -> &[BoundaryTree] {
        &self.trees
    }

    /// Unweighted majority vote; ties go to the lowest class index.
    pub fn classify(&self, query: &[f64]) -> Result<usize> {
        let votes = self
            .trees
            .iter()
            .map(|t| t.classify(query))
            .collect::<Result<Vec<_>>>()?;
        Ok(majority_vote(&votes))
    }
}

pub(crate) fn majority_vote(votes: &[usize]) -> usize {
    let top = votes.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; top + 1];
    for &v in votes {
        counts[v] += 1;
    }
    let mut best = 0;
    for (class, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = class;
        }
    }
    best
}
