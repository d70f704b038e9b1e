//! Two-hidden-layer perceptron encoder with three linear heads: classifier,
//! OT (cluster) head and a two-layer projection for the contrastive loss.
//! Gradients are computed by hand.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    fn normal(input: usize, output: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("positive std");
        Self {
            w: Array2::from_shape_simple_fn((output, input), || dist.sample(rng)),
            b: Array1::zeros(output),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>, grads: &mut Linear) -> Array2<f64> {
        grads.w += &grad_out.t().dot(x);
        grads.b += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.w)
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_backward(pre: &Array2<f64>, grad: Array2<f64>) -> Array2<f64> {
    let mut g = grad;
    g.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub clusters: usize,
    pub projection: usize,
}

/// Fixed per-feature affine map `(x - mean) / scale` applied before the
/// encoder. Not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl InputScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    /// Column means and standard deviations of `x`; constant columns keep scale 1.
    pub fn fitted(x: &Array2<f64>) -> Self {
        let dim = x.ncols();
        if x.nrows() == 0 {
            return Self::identity(dim);
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input: InputScaling,
    pub enc1: Linear,
    pub enc2: Linear,
    pub cls: Linear,
    pub ot: Linear,
    pub proj1: Linear,
    pub proj2: Linear,
}

/// Per-sample outputs, one row per input row.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub z: Array2<f64>,
    pub logits_cls: Array2<f64>,
    pub logits_ot: Array2<f64>,
    pub proj: Array2<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    h1_pre: Array2<f64>,
    h1: Array2<f64>,
    z_pre: Array2<f64>,
    z: Array2<f64>,
    p_pre: Array2<f64>,
    p: Array2<f64>,
}

/// Upstream gradients with respect to the network outputs.
#[derive(Debug, Default)]
pub struct OutputGrads {
    pub logits_cls: Option<Array2<f64>>,
    pub logits_ot: Option<Array2<f64>>,
    pub proj: Option<Array2<f64>>,
}

pub const TENSOR_NAMES: [&str; 12] = [
    "enc1.w", "enc1.b", "enc2.w", "enc2.b", "cls.w", "cls.b", "ot.w", "ot.b", "proj1.w", "proj1.b",
    "proj2.w", "proj2.b",
];

impl Network {
    /// He-normal hidden layers, `N(0, 1/fan_in)` OT and projection outputs,
    /// and a zero classifier head. The zero head keeps the mean class logit
    /// at zero throughout training, since softmax cross-entropy gradients sum
    /// to zero across classes.
    pub fn init(shape: NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let lecun = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
        let NetworkShape {
            input,
            hidden,
            classes,
            clusters,
            projection,
        } = shape;
        Self {
            input: InputScaling::identity(input),
            enc1: Linear::normal(input, hidden, he(input), &mut rng),
            enc2: Linear::normal(hidden, hidden, he(hidden), &mut rng),
            cls: Linear::zeros(hidden, classes),
            ot: Linear::normal(hidden, clusters, lecun(hidden), &mut rng),
            proj1: Linear::normal(hidden, hidden, he(hidden), &mut rng),
            proj2: Linear::normal(hidden, projection, lecun(hidden), &mut rng),
        }
    }

    /// Same shapes, all zeros, identity input scaling; used for gradients and
    /// optimizer state.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.w.ncols(), l.w.nrows());
        Self {
            input: InputScaling::identity(self.enc1.w.ncols()),
            enc1: z(&self.enc1),
            enc2: z(&self.enc2),
            cls: z(&self.cls),
            ot: z(&self.ot),
            proj1: z(&self.proj1),
            proj2: z(&self.proj2),
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input: self.enc1.w.ncols(),
            hidden: self.enc1.w.nrows(),
            classes: self.cls.w.nrows(),
            clusters: self.ot.w.nrows(),
            projection: self.proj2.w.nrows(),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 12] {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn v(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s(&self.enc1.w),
            v(&self.enc1.b),
            s(&self.enc2.w),
            v(&self.enc2.b),
            s(&self.cls.w),
            v(&self.cls.b),
            s(&self.ot.w),
            v(&self.ot.b),
            s(&self.proj1.w),
            v(&self.proj1.b),
            s(&self.proj2.w),
            v(&self.proj2.b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        let Network {
            input: _,
            enc1,
            enc2,
            cls,
            ot,
            proj1,
            proj2,
        } = self;
        let [a, b, c, d, e, f] = [enc1, enc2, cls, ot, proj1, proj2].map(|l| {
            (
                l.w.as_slice_mut().expect("standard layout"),
                l.b.as_slice_mut().expect("standard layout"),
            )
        });
        [a.0, a.1, b.0, b.1, c.0, c.1, d.0, d.1, e.0, e.1, f.0, f.1]
    }

    /// Shapes of every tensor, `(rows, cols)`; biases have one column.
    pub fn tensor_shapes(&self) -> [(usize, usize); 12] {
        let w = |l: &Linear| l.w.dim();
        let b = |l: &Linear| (l.b.len(), 1);
        [
            w(&self.enc1),
            b(&self.enc1),
            w(&self.enc2),
            b(&self.enc2),
            w(&self.cls),
            b(&self.cls),
            w(&self.ot),
            b(&self.ot),
            w(&self.proj1),
            b(&self.proj1),
            w(&self.proj2),
            b(&self.proj2),
        ]
    }

    /// Trainable tensors only; the input scaling is fixed.
    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        let d = self.enc1.w.ncols();
        if x.ncols() != d {
            return Err(Error::Shape {
                expected: format!("{d} input features"),
                got: format!("{} features", x.ncols()),
            });
        }
        if let Some(((r, _), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite input in row {r}")));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Outputs> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Outputs, ForwardCache)> {
        self.check_input(x)?;
        let x = self.input.apply(x);
        let h1_pre = self.enc1.forward(&x);
        let h1 = relu(&h1_pre);
        let z_pre = self.enc2.forward(&h1);
        let z = relu(&z_pre);
        let logits_cls = self.cls.forward(&z);
        let logits_ot = self.ot.forward(&z);
        let p_pre = self.proj1.forward(&z);
        let p = relu(&p_pre);
        let proj = self.proj2.forward(&p);
        let outputs = Outputs {
            z: z.clone(),
            logits_cls,
            logits_ot,
            proj,
        };
        let cache = ForwardCache {
            x,
            h1_pre,
            h1,
            z_pre,
            z,
            p_pre,
            p,
        };
        Ok((outputs, cache))
    }

    /// Backpropagates the given output gradients and adds the result to `grads`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &OutputGrads, grads: &mut Network) {
        let mut dz = Array2::zeros(cache.z.dim());
        if let Some(g) = &upstream.logits_cls {
            dz += &self.cls.backward(&cache.z, g, &mut grads.cls);
        }
        if let Some(g) = &upstream.logits_ot {
            dz += &self.ot.backward(&cache.z, g, &mut grads.ot);
        }
        if let Some(g) = &upstream.proj {
            let dp = self.proj2.backward(&cache.p, g, &mut grads.proj2);
            let dp_pre = relu_backward(&cache.p_pre, dp);
            dz += &self.proj1.backward(&cache.z, &dp_pre, &mut grads.proj1);
        }
        let dz_pre = relu_backward(&cache.z_pre, dz);
        let dh1 = self.enc2.backward(&cache.h1, &dz_pre, &mut grads.enc2);
        let dh1_pre = relu_backward(&cache.h1_pre, dh1);
        self.enc1.backward(&cache.x, &dh1_pre, &mut grads.enc1);
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{arr2, concatenate};

    use super::*;

    fn shape() -> NetworkShape {
        NetworkShape {
            input: 3,
            hidden: 8,
            classes: 4,
            clusters: 5,
            projection: 6,
        }
    }

    #[test]
    fn zero_input_with_zero_heads_gives_zero_logits() {
        let mut net = Network::init(shape(), 1);
        net.ot = Linear::zeros(8, 5);
        let out = net.forward(&Array2::zeros((2, 3))).unwrap();
        assert!(out.logits_cls.iter().all(|&v| v == 0.0));
        assert!(out.logits_ot.iter().all(|&v| v == 0.0));
        assert_eq!(out.proj.dim(), (2, 6));
    }

    #[test]
    fn rows_are_processed_independently() {
        let net = Network::init(shape(), 2);
        let a = arr2(&[[0.3, -1.2, 2.0]]);
        let b = arr2(&[[1.0, 0.5, -0.7]]);
        let single = net.forward(&a).unwrap();
        let pair = net.forward(&concatenate![Axis(0), a, b]).unwrap();
        let dup = net.forward(&concatenate![Axis(0), a, a]).unwrap();
        assert_eq!(pair.logits_ot.row(0), single.logits_ot.row(0));
        assert_eq!(pair.proj.row(0), single.proj.row(0));
        assert_eq!(dup.logits_ot.row(0), dup.logits_ot.row(1));
        assert_eq!(dup.z.row(0), dup.z.row(1));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Network::init(shape(), 3);
        assert!(matches!(net.forward(&Array2::zeros((1, 2))), Err(Error::Shape { .. })));
    }

    #[test]
    fn input_scaling_standardizes_columns() {
        let x = arr2(&[[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]]);
        let s = InputScaling::fitted(&x);
        let y = s.apply(&x);
        assert!((y.column(0).sum()).abs() < 1e-12);
        assert!((y.column(0).mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-12);
        assert!(y.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(Network::init(shape(), 9), Network::init(shape(), 9));
        assert_ne!(Network::init(shape(), 9), Network::init(shape(), 10));
        assert_eq!(Network::init(shape(), 9).shape(), shape());
    }
}
