use ndarray::{ArrayViewMut, Dimension, Zip};
use serde::{Deserialize, Serialize};

use super::{cast, Gradients, Network, Scalar};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub(crate) first: Gradients<T>,
    pub(crate) second: Gradients<T>,
    pub(crate) step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Gradients<T>, &Gradients<T>) {
        (&self.first, &self.second)
    }

    /// One update of `net` against `grads` with learning rate `lr`.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let shapes_match = self.first.layers.len() == grads.layers.len()
            && grads.layers.len() == net.layers().len()
            && net.layers().iter().zip(&grads.layers).zip(&self.first.layers).all(
                |((p, g), m)| {
                    p.weights.dim() == g.weights.dim()
                        && g.weights.dim() == m.weights.dim()
                        && p.bias.len() == g.bias.len()
                },
            );
        if !shapes_match {
            return Err(Error::InvalidArgument(
                "gradient shapes do not match the network".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1: T = cast(self.beta1);
        let b2: T = cast(self.beta2);
        let c1: T = cast(1.0 - self.beta1.powi(t));
        let c2: T = cast(1.0 - self.beta2.powi(t));
        let eps: T = cast(self.epsilon);
        let lr: T = cast(lr);
        let one = T::one();

        fn update<T: Scalar, D: Dimension>(
            mut p: ArrayViewMut<'_, T, D>,
            mut m: ArrayViewMut<'_, T, D>,
            mut v: ArrayViewMut<'_, T, D>,
            g: ndarray::ArrayView<'_, T, D>,
            k: [T; 7],
        ) {
            let [b1, b2, c1, c2, eps, lr, one] = k;
            let tiny = T::min_positive_value();
            let rule = |p: &mut T, m: &mut T, v: &mut T, g: T| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                // Moments of parameters that never see a gradient (e.g. weights
                // of always-zero pixels) decay into subnormals, which are very
                // slow to compute with. Their contribution is far below
                // rounding, so they are flushed to zero.
                if m.abs() < tiny {
                    *m = T::zero();
                }
                if *v < tiny {
                    *v = T::zero();
                }
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            };
            // Plain slices let the compiler vectorize the common contiguous case.
            if let (Some(p), Some(m), Some(v), Some(g)) =
                (p.as_slice_mut(), m.as_slice_mut(), v.as_slice_mut(), g.as_slice())
            {
                let n = p.len();
                let (m, v, g) = (&mut m[..n], &mut v[..n], &g[..n]);
                for i in 0..n {
                    rule(&mut p[i], &mut m[i], &mut v[i], g[i]);
                }
            } else {
                Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| rule(p, m, v, g));
            }
        }

        let k = [b1, b2, c1, c2, eps, lr, one];
        for (((layer, m), v), g) in net
            .layers_mut()
            .iter_mut()
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
            .zip(&grads.layers)
        {
            update(
                layer.weights.view_mut(),
                m.weights.view_mut(),
                v.weights.view_mut(),
                g.weights.view(),
                k,
            );
            update(
                layer.bias.view_mut(),
                m.bias.view_mut(),
                v.bias.view_mut(),
                g.bias.view(),
                k,
            );
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate: divided by `factor` at each breakpoint
/// (an epoch index) that has been reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub breakpoints: Vec<usize>,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    10.0
}

impl LrSchedule {
    pub fn new(initial: f64, breakpoints: Vec<usize>) -> Self {
        Self {
            initial,
            breakpoints,
            factor: default_factor(),
        }
    }

    /// Decay at epochs 400, 1000 and 3000.
    pub fn standard(initial: f64) -> Self {
        Self::new(initial, vec![400, 1000, 3000])
    }

    /// Breakpoints for a budget of `epochs`: each standard breakpoint, or
    /// 50%, 75% and 90% of the budget if that comes first. A 5000-epoch
    /// budget gets the standard schedule.
    pub fn for_budget(initial: f64, epochs: usize) -> Self {
        let at = |standard: usize, share: f64| standard.min(((epochs as f64 * share).round() as usize).max(1));
        Self::new(initial, vec![at(400, 0.5), at(1000, 0.75), at(3000, 0.9)])
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let passed = self.breakpoints.iter().filter(|&&b| epoch >= b).count();
        self.initial / self.factor.powi(passed as i32)
    }
}
