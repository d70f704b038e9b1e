//! Vector-data augmentations: additive Gaussian jitter scaled by the
//! per-feature standard deviation, then a random isotropic rescaling.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    /// Per-feature jitter standard deviation.
    pub jitter_std: Vec<f64>,
    /// Scale factors are drawn from `[1 - scale_spread, 1 + scale_spread]`.
    pub scale_spread: f64,
}

impl Augmentation {
    /// Jitter of `jitter_fraction` times each feature's standard deviation in `data`.
    pub fn fitted(data: &Array2<f64>, jitter_fraction: f64, scale_spread: f64) -> Self {
        let std = if data.nrows() > 1 {
            data.std_axis(Axis(0), 0.0).to_vec()
        } else {
            vec![0.0; data.ncols()]
        };
        Self {
            jitter_std: std.into_iter().map(|s| s * jitter_fraction).collect(),
            scale_spread,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale_spread == 0.0 && self.jitter_std.iter().all(|&s| s == 0.0)
    }

    pub fn apply(&self, x: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
        if self.is_identity() {
            return x.clone();
        }
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (v, s) in row.iter_mut().zip(&self.jitter_std) {
                let n: f64 = StandardNormal.sample(rng);
                *v += s * n;
            }
            let scale = if self.scale_spread > 0.0 {
                rng.random_range(1.0 - self.scale_spread..=1.0 + self.scale_spread)
            } else {
                1.0
            };
            row.mapv_inplace(|v| v * scale);
        }
        out
    }
}
