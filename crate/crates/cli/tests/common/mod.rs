//! Independent reference implementations used by the acceptance suite.
//!
//! Nothing here calls into the library's numeric code; each oracle is a
//! direct, unoptimised restatement of the definition it checks against.
#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::Path;

use bset_core::nn::Network;
use bset_core::BoundaryTree;

pub fn scalar_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc.sqrt()
}

/// Lowest-index nearest neighbour by linear scan with strict comparison.
pub fn scan_nearest(query: &[f64], refs: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, r) in refs.iter().enumerate() {
        let d = scalar_distance(query, r);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Indices kept when points are offered in order and a point stays iff its
/// nearest kept point has another label.
pub fn select_boundary_set(points: &[Vec<f64>], labels: &[usize]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..points.len() {
        let refs: Vec<Vec<f64>> = kept.iter().map(|&k| points[k].clone()).collect();
        if refs.is_empty() || labels[kept[scan_nearest(&points[i], &refs)]] != labels[i] {
            kept.push(i);
        }
    }
    kept
}

/// Plain loops over the layer weights, ReLU on every layer but the last.
pub fn naive_forward(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
    let layers = net.layers();
    let mut a = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let (out, inp) = layer.weights.dim();
        assert_eq!(inp, a.len());
        let mut z = vec![0.0; out];
        for o in 0..out {
            let mut s = layer.bias[o];
            for i in 0..inp {
                s += layer.weights[[o, i]] * a[i];
            }
            z[o] = if l + 1 < layers.len() { s.max(0.0) } else { s };
        }
        a = z;
    }
    a
}

/// `−log` of the share of `exp(−d/σ)` mass held by candidates labelled
/// `target`, or `None` when there are none.
pub fn soft_vote_loss(
    query: &[f64],
    candidates: &[Vec<f64>],
    labels: &[usize],
    target: usize,
    sigma: f64,
) -> Option<f64> {
    let mut all = 0.0;
    let mut hit = 0.0;
    for (c, &l) in candidates.iter().zip(labels) {
        let w = (-scalar_distance(query, c) / sigma).exp();
        all += w;
        if l == target {
            hit += w;
        }
    }
    (hit > 0.0).then(|| -(hit / all).ln())
}

/// Greedy walk from the root with an unbounded child count: stop when the
/// current node is at least as close as every child; ties go to the lowest
/// index. Returns the nodes entered from their parent and the final node.
pub fn greedy_walk(tree: &BoundaryTree, query: &[f64]) -> (Vec<usize>, usize) {
    let mut v = 0;
    let mut visited = Vec::new();
    loop {
        let mut cand: Vec<usize> = tree.children(v).to_vec();
        cand.push(v);
        cand.sort_unstable();
        let mut best = cand[0];
        let mut best_d = f64::INFINITY;
        for &c in &cand {
            let d = scalar_distance(query, &tree.node(c).point);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        if best == v {
            return (visited, v);
        }
        visited.push(best);
        v = best;
    }
}

fn step_prob(tree: &BoundaryTree, node: usize, query: &[f64], sigma: f64) -> f64 {
    let p = tree.parent(node).expect("non-root");
    let w = |i: usize| (-scalar_distance(query, &tree.node(i).point) / sigma).exp();
    let mut z = w(p);
    for &c in tree.children(p) {
        z += w(c);
    }
    w(node) / z
}

/// Class distribution from the product of transition probabilities along the
/// greedy path, with the last step spread over the final node and its
/// siblings, normalised over classes.
pub fn path_product(tree: &BoundaryTree, query: &[f64], sigma: f64, num_classes: usize) -> Vec<f64> {
    let (visited, s) = greedy_walk(tree, query);
    let mut y = vec![0.0; num_classes];
    match tree.parent(s) {
        None => y[tree.node(s).label] = 1.0,
        Some(p) => {
            let mut prefix = 1.0;
            for &i in visited.iter().filter(|&&i| i != s) {
                prefix *= step_prob(tree, i, query, sigma);
            }
            for &j in tree.children(p) {
                y[tree.node(j).label] += prefix * step_prob(tree, j, query, sigma);
            }
            let z: f64 = y.iter().sum();
            for v in &mut y {
                *v /= z;
            }
        }
    }
    y
}

/// Central differences of `f` over every parameter, weights before bias,
/// layer by layer.
pub fn finite_differences(net: &Network<f64>, h: f64, f: impl Fn(&Network<f64>) -> f64) -> Vec<f64> {
    let mut work = net.clone();
    let mut out = Vec::new();
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = net.layers()[l].weights[[r, c]];
                work.layers_mut()[l].weights[[r, c]] = orig + h;
                let up = f(&work);
                work.layers_mut()[l].weights[[r, c]] = orig - h;
                let down = f(&work);
                work.layers_mut()[l].weights[[r, c]] = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
        for b in 0..net.layers()[l].bias.len() {
            let orig = net.layers()[l].bias[b];
            work.layers_mut()[l].bias[b] = orig + h;
            let up = f(&work);
            work.layers_mut()[l].bias[b] = orig - h;
            let down = f(&work);
            work.layers_mut()[l].bias[b] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn write_idx(path: &Path, magic: u32, dims: &[u32], payload: &[u8]) {
    let mut f = fs::File::create(path).unwrap();
    f.write_all(&magic.to_be_bytes()).unwrap();
    for d in dims {
        f.write_all(&d.to_be_bytes()).unwrap();
    }
    f.write_all(payload).unwrap();
}

/// Writes a train/test pair of IDX files: `side × side` images whose
/// brightness pattern depends on the class, plus a little noise.
pub fn write_toy_idx(dir: &Path, train: usize, test: usize, classes: usize, side: usize, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir).unwrap();
    for (prefix, n) in [("train", train), ("t10k", test)] {
        let mut pixels = Vec::with_capacity(n * side * side);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes;
            labels.push(label as u8);
            for p in 0..side * side {
                let on = p % classes == label;
                let base: i32 = if on { 200 } else { 30 };
                pixels.push((base + rng.random_range(-25..=25)) as u8);
            }
        }
        let side = side as u32;
        write_idx(&dir.join(format!("{prefix}-images-idx3-ubyte")), 2051, &[n as u32, side, side], &pixels);
        write_idx(&dir.join(format!("{prefix}-labels-idx1-ubyte")), 2049, &[n as u32], &labels);
    }
}
