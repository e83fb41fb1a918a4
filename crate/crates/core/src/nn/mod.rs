//! Fully connected ReLU networks with hand-written reverse mode.
//!
//! Hidden layers apply ReLU, the last layer is linear. Batches are row-major
//! `B × D` matrices. The scalar type is generic so that training can run in
//! `f32` and gradient checks in `f64` through the same code.

mod adam;
pub(crate) mod checkpoint;

pub use adam::{AdamState, LrSchedule};
pub use checkpoint::Checkpoint;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + AddAssign
    + MulAssign
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts to every supported scalar")
}

/// Batches up to these sizes skip gemm in the forward and backward passes.
/// Summation order therefore depends on the batch size: results are
/// reproducible for a given batch shape but may differ in the last bits
/// between shapes.
const SMALL_FORWARD: usize = 2;
const SMALL_BACKWARD: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out × in`, row-major.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    /// Bumped on every mutable access so that stale tapes are detected.
    generation: u64,
}

// Equality compares parameters only.
impl<T: PartialEq> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations cached by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    generation: u64,
    /// Input to each layer. For `l > 0` this is `ReLU(z_{l−1})`, whose sign
    /// pattern is the ReLU mask.
    inputs: Vec<Array2<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    /// The same tape restricted to a subset of batch rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Tape<T> {
        Tape {
            generation: self.generation,
            inputs: self.inputs.iter().map(|a| a.select(Axis(0), rows)).collect(),
        }
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// All entries flattened layer by layer, weights before bias.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_zero()))
    }
}

impl<T: Scalar> Network<T> {
    /// He-uniform weights (`U(±√(6/fan_in))`), zero biases.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((out, fan_in), || cast(rng.random_range(-limit..limit)));
                Layer {
                    weights,
                    bias: Array1::zeros(out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch {
                    expected: l.out_dim(),
                    found: l.bias.len(),
                });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].out_dim(),
                    found: l.in_dim(),
                });
            }
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.generation += 1;
        &mut self.layers
    }

    /// Layer widths from input to output, e.g. `[784, 400, 400, 20]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |x: &T| U::from_f64(x.to_f64().expect("finite")).expect("finite");
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.map(conv),
                    bias: l.bias.map(conv),
                })
                .collect(),
            generation: 0,
        }
    }

    fn check_input(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, a: &ArrayView2<'_, T>) -> Array2<T> {
        let layer = &self.layers[l];
        let mut z = if a.nrows() <= SMALL_FORWARD {
            // gemm's packing cost dominates for a handful of rows.
            // Each weight row is read once and dotted with every input row.
            let mut z = Array2::zeros((a.nrows(), layer.out_dim()));
            for (o, w_row) in layer.weights.outer_iter().enumerate() {
                for (r, row) in a.outer_iter().enumerate() {
                    z[[r, o]] = w_row.dot(&row);
                }
            }
            z
        } else {
            a.dot(&layer.weights.t())
        };
        z += &layer.bias;
        if l + 1 < self.layers.len() {
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
        z
    }

    /// Forward pass without caching.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut a = self.layer_forward(0, &x);
        for l in 1..self.layers.len() {
            a = self.layer_forward(l, &a.view());
        }
        check_finite(&a)?;
        Ok(a)
    }

    /// Forward pass in row chunks, to bound memory on large inputs.
    pub fn predict_chunked(&self, x: ArrayView2<'_, T>, chunk: usize) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (xs, mut os) in x
            .axis_chunks_iter(Axis(0), chunk.max(1))
            .zip(out.axis_chunks_iter_mut(Axis(0), chunk.max(1)))
        {
            os.assign(&self.predict(xs)?);
        }
        Ok(out)
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, Tape<T>)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        for l in 0..self.layers.len() - 1 {
            let a = self.layer_forward(l, &inputs[l].view());
            inputs.push(a);
        }
        let last = self.layers.len() - 1;
        let out = self.layer_forward(last, &inputs[last].view());
        check_finite(&out)?;
        Ok((
            out,
            Tape {
                generation: self.generation,
                inputs,
            },
        ))
    }

    /// Reverse pass. `output_grad` is `∂L/∂output` for the rows recorded on
    /// `tape`. Returns parameter gradients and, if requested, `∂L/∂input`.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        output_grad: ArrayView2<'_, T>,
        want_input_grad: bool,
    ) -> Result<(Gradients<T>, Option<Array2<T>>)> {
        if tape.generation != self.generation
            || tape.inputs.len() != self.layers.len()
            || tape.inputs.iter().zip(&self.layers).any(|(a, l)| a.ncols() != l.in_dim())
        {
            return Err(Error::StaleTape);
        }
        if output_grad.dim() != (tape.batch_size(), self.output_dim()) {
            return Err(Error::DimensionMismatch {
                expected: tape.batch_size() * self.output_dim(),
                found: output_grad.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.to_owned();
        let mut input_grad = None;
        for l in (0..self.layers.len()).rev() {
            let input = &tape.inputs[l];
            let weights = &self.layers[l].weights;
            let small = delta.nrows() <= SMALL_BACKWARD;
            if small {
                let g = &mut grads.layers[l].weights;
                for (d, a) in delta.outer_iter().zip(input.outer_iter()) {
                    for (mut g_row, &d) in g.outer_iter_mut().zip(d.iter()) {
                        if d != T::zero() {
                            g_row.scaled_add(d, &a);
                        }
                    }
                }
            } else {
                grads.layers[l].weights = delta.t().dot(input);
            }
            grads.layers[l].bias = delta.sum_axis(Axis(0));
            let propagate = |delta: &Array2<T>| -> Array2<T> {
                if small {
                    let mut d_in = Array2::zeros((delta.nrows(), weights.ncols()));
                    for (d, mut out) in delta.outer_iter().zip(d_in.outer_iter_mut()) {
                        for (w_row, &d) in weights.outer_iter().zip(d.iter()) {
                            if d != T::zero() {
                                out.scaled_add(d, &w_row);
                            }
                        }
                    }
                    d_in
                } else {
                    delta.dot(weights)
                }
            };
            if l > 0 {
                let mut d_in = propagate(&delta);
                // ReLU'(z) = 1 iff z > 0 iff ReLU(z) > 0; subgradient 0 at 0.
                Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = d_in;
            } else if want_input_grad {
                input_grad = Some(propagate(&delta));
            }
        }
        Ok((grads, input_grad))
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(
            "architecture needs an input and at least one layer".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig("layer widths must be positive".into()));
    }
    Ok(())
}

fn check_finite<T: Scalar>(a: &Array2<T>) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net_from(layers: Vec<(Array2<f64>, Array1<f64>)>) -> Network<f64> {
        Network::from_layers(
            layers
                .into_iter()
                .map(|(weights, bias)| Layer { weights, bias })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = net_from(vec![
            (Array2::zeros((3, 2)), Array1::zeros(3)),
            (Array2::zeros((2, 3)), Array1::zeros(2)),
        ]);
        let out = net.predict(array![[1.0, -2.0], [0.5, 4.0]].view()).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_single_layer() {
        let net = net_from(vec![(Array2::eye(3), Array1::zeros(3))]);
        let x = array![[0.0, 1.5, 2.0]];
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn hand_computed_two_layer() {
        let net = net_from(vec![
            (array![[2.0]], array![0.0]),
            (array![[3.0]], array![0.0]),
        ]);
        assert_eq!(net.predict(array![[5.0]].view()).unwrap(), array![[30.0]]);
        // The hidden ReLU clips negative inputs.
        assert_eq!(net.predict(array![[-5.0]].view()).unwrap(), array![[0.0]]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = net_from(vec![(Array2::eye(2), Array1::zeros(2))]);
        assert!(matches!(
            net.forward(array![[1.0, 2.0, 3.0]].view()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            net.forward(array![[f64::INFINITY, 0.0]].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn backward_zero_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::<f64>::random(&[3, 4, 2], &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let (_, tape) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&tape, Array2::zeros((2, 2)).view(), true).unwrap();
        assert!(g.is_zero());
        assert!(dx.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_closed_form() {
        let net = net_from(vec![(array![[0.7, -1.2]], array![0.3])]);
        let x = array![[2.0, 5.0]];
        let (_, tape) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&tape, array![[1.0]].view(), true).unwrap();
        assert_eq!(g.layers[0].weights, x);
        assert_eq!(g.layers[0].bias, array![1.0]);
        assert_eq!(dx.unwrap(), array![[0.7, -1.2]]);
    }

    #[test]
    fn backward_detects_stale_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::<f64>::random(&[2, 3, 1], &mut rng).unwrap();
        let (_, tape) = net.forward(array![[1.0, 2.0]].view()).unwrap();
        net.layers_mut()[0].bias[0] += 1.0;
        assert!(matches!(
            net.backward(&tape, array![[1.0]].view(), false),
            Err(Error::StaleTape)
        ));
        let other = Network::<f64>::random(&[2, 5, 1], &mut rng).unwrap();
        let (_, tape) = other.forward(array![[1.0, 2.0]].view()).unwrap();
        assert!(net.backward(&tape, array![[1.0]].view(), false).is_err());
    }

    fn finite_difference_check(dims: &[usize], batch: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::<f64>::random(dims, &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((batch, dims[0]), || rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_simple_fn((batch, *dims.last().unwrap()), || {
            rng.random_range(-1.0..1.0)
        });
        // L = Σ w ⊙ f(x), so ∂L/∂f = w.
        let loss = |n: &Network<f64>, x: &Array2<f64>| (&n.predict(x.view()).unwrap() * &w).sum();
        let (_, tape) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&tape, w.view(), true).unwrap();
        let h = 1e-5;
        for l in 0..net.layers().len() {
            let (rows, cols) = net.layers()[l].weights.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut p = net.clone();
                    p.layers_mut()[l].weights[[i, j]] += h;
                    let mut m = net.clone();
                    m.layers_mut()[l].weights[[i, j]] -= h;
                    let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                    let an = g.layers[l].weights[[i, j]];
                    assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "W{l}[{i},{j}] {an} vs {fd}");
                }
                let mut p = net.clone();
                p.layers_mut()[l].bias[i] += h;
                let mut m = net.clone();
                m.layers_mut()[l].bias[i] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                let an = g.layers[l].bias[i];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "b{l}[{i}] {an} vs {fd}");
            }
        }
        let dx = dx.unwrap();
        for b in 0..batch {
            for k in 0..dims[0] {
                let mut xp = x.clone();
                xp[[b, k]] += h;
                let mut xm = x.clone();
                xm[[b, k]] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
                assert!((fd - dx[[b, k]]).abs() <= 1e-4 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, dims) in [(1, vec![3, 4, 2]), (2, vec![6, 5, 6, 3]), (3, vec![2, 1]), (4, vec![5, 6, 4, 6])] {
            finite_difference_check(&dims, 4, seed);
        }
    }

    #[test]
    fn tape_row_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::<f64>::random(&[3, 5, 2], &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let (_, tape) = net.forward(x.view()).unwrap();
        let grad = array![[0.0, 0.0], [1.0, -2.0], [0.0, 0.0], [0.5, 0.25]];
        let (full, _) = net.backward(&tape, grad.view(), false).unwrap();
        let sub = tape.select_rows(&[1, 3]);
        let (part, _) = net
            .backward(&sub, grad.select(Axis(0), &[1, 3]).view(), false)
            .unwrap();
        for (a, b) in full.to_flat().iter().zip(part.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = Network::<f32>::random(&[784, 40, 20], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = Network::<f32>::random(&[784, 40, 20], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let c = Network::<f32>::random(&[784, 40, 20], &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.dims(), vec![784, 40, 20]);
        assert_eq!(a.num_params(), 784 * 40 + 40 + 40 * 20 + 20);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::<f32>::random(&[50, 30, 10], &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((17, 50), || rng.random_range(0.0f32..1.0));
        assert_eq!(net.predict(x.view()).unwrap(), net.predict(x.view()).unwrap());
        assert_eq!(net.predict_chunked(x.view(), 5).unwrap(), net.predict_chunked(x.view(), 5).unwrap());
        let whole = net.predict(x.view()).unwrap();
        let chunked = net.predict_chunked(x.view(), 5).unwrap();
        for (a, b) in whole.iter().zip(&chunked) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn invalid_architectures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Network::<f64>::random(&[3], &mut rng).is_err());
        assert!(Network::<f64>::random(&[3, 0, 2], &mut rng).is_err());
        assert!(Network::from_layers(vec![
            Layer { weights: Array2::<f64>::zeros((2, 3)), bias: Array1::zeros(2) },
            Layer { weights: Array2::zeros((1, 3)), bias: Array1::zeros(1) },
        ])
        .is_err());
    }
}
