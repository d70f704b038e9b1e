//! Classification, uniformity and InfoNCE losses with gradients with respect
//! to the network outputs.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::queue::MemoryQueue;
use crate::numeric::{log_sum_exp, softmax_into};

/// Per-sample role in the classification / uniformity losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Labeled(usize),
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_unif: f64,
    pub l_rep: f64,
    pub total: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(l_cls: f64, l_unif: f64, l_rep: f64, gamma: f64, lambda: f64) -> Self {
        Self {
            l_cls,
            l_unif,
            l_rep,
            total: l_cls + gamma * l_unif + lambda * l_rep,
            gamma,
            lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.l_cls.is_finite() && self.l_unif.is_finite() && self.l_rep.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct ClsUnifLoss {
    pub l_cls: f64,
    pub l_unif: f64,
    /// `∂ l_cls / ∂ logits`
    pub grad_cls: Array2<f64>,
    /// `∂ l_unif / ∂ logits`
    pub grad_unif: Array2<f64>,
}

/// Mean cross-entropy of labeled rows against their one-hot label and of
/// unlabeled rows against the uniform distribution over classes. An empty
/// role set contributes zero.
pub fn cls_unif_loss(logits: &Array2<f64>, roles: &[Role]) -> Result<ClsUnifLoss> {
    let (b, m) = logits.dim();
    if roles.len() != b {
        return Err(Error::Shape {
            expected: format!("{b} roles"),
            got: roles.len().to_string(),
        });
    }
    let n_lab = roles.iter().filter(|r| matches!(r, Role::Labeled(_))).count();
    let n_unl = b - n_lab;
    let mut grad_cls = Array2::zeros((b, m));
    let mut grad_unif = Array2::zeros((b, m));
    let (mut l_cls, mut l_unif) = (0.0, 0.0);
    let mut p = vec![0.0; m];
    for (i, role) in roles.iter().enumerate() {
        let row = logits.row(i).to_vec();
        softmax_into(&row, &mut p);
        let lse = log_sum_exp(row.iter().copied());
        match *role {
            Role::Labeled(y) => {
                if y >= m {
                    return Err(Error::invalid(format!("label {y} outside [0, {m})")));
                }
                l_cls += lse - row[y];
                let scale = 1.0 / n_lab as f64;
                for c in 0..m {
                    let target = if c == y { 1.0 } else { 0.0 };
                    grad_cls[[i, c]] = (p[c] - target) * scale;
                }
            }
            Role::Unlabeled => {
                let mean_logit = row.iter().sum::<f64>() / m as f64;
                l_unif += lse - mean_logit;
                let scale = 1.0 / n_unl as f64;
                for c in 0..m {
                    grad_unif[[i, c]] = (p[c] - 1.0 / m as f64) * scale;
                }
            }
        }
    }
    Ok(ClsUnifLoss {
        l_cls: if n_lab > 0 { l_cls / n_lab as f64 } else { 0.0 },
        l_unif: if n_unl > 0 { l_unif / n_unl as f64 } else { 0.0 },
        grad_cls,
        grad_unif,
    })
}

#[derive(Debug, Clone)]
pub struct InfoNceLoss {
    pub value: f64,
    pub grad_query: Array2<f64>,
    /// Gradient through the positive key in the numerator only; queue
    /// entries are constants.
    pub grad_key: Array2<f64>,
}

const NORM_FLOOR: f64 = 1e-12;

fn normalize(v: ArrayView1<f64>) -> (Vec<f64>, f64) {
    let norm = v.dot(&v).sqrt().max(NORM_FLOOR);
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// Gradient through `x ↦ x / |x|`: `(I - x̂ x̂ᵀ) g / |x|`.
fn normalize_backward(unit: &[f64], norm: f64, grad_unit: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(grad_unit).map(|(u, g)| u * g).sum();
    unit.iter()
        .zip(grad_unit)
        .map(|(u, g)| (g - dot * u) / norm)
        .collect()
}

/// `-(1/B) Σ_i log[ exp(cos(q_i, k_i)/t) / Σ_{z ∈ queue} exp(cos(q_i, z)/t) ]`.
///
/// The queue must already contain the current batch's keys.
pub fn infonce_loss(
    query: &Array2<f64>,
    key: &Array2<f64>,
    queue: &MemoryQueue,
    temperature: f64,
) -> Result<InfoNceLoss> {
    if queue.is_empty() {
        return Err(Error::invalid("InfoNCE needs a non-empty memory queue"));
    }
    if query.dim() != key.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", query.dim()),
            got: format!("{:?}", key.dim()),
        });
    }
    if queue.dim() != query.ncols() {
        return Err(Error::Shape {
            expected: format!("queue entries of length {}", query.ncols()),
            got: queue.dim().to_string(),
        });
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::invalid("contrastive temperature must be positive"));
    }
    let (b, p) = query.dim();
    let entries: Vec<&[f64]> = queue.entries().collect();
    let mut grad_query = Array2::zeros((b, p));
    let mut grad_key = Array2::zeros((b, p));
    let mut total = 0.0;
    let mut logits = vec![0.0; entries.len()];
    for i in 0..b {
        let (q_hat, q_norm) = normalize(query.row(i));
        let (k_hat, k_norm) = normalize(key.row(i));
        let pos: f64 = q_hat.iter().zip(&k_hat).map(|(a, b)| a * b).sum::<f64>() / temperature;
        for (l, z) in logits.iter_mut().zip(&entries) {
            *l = q_hat.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() / temperature;
        }
        let lse = log_sum_exp(logits.iter().copied());
        total += lse - pos;

        // ∂/∂q̂ = (Σ_j softmax_j z_j - k̂) / t ;  ∂/∂k̂ = -q̂ / t
        let mut g_q_hat = vec![0.0; p];
        for (l, z) in logits.iter().zip(&entries) {
            let w = (l - lse).exp();
            for (g, zv) in g_q_hat.iter_mut().zip(z.iter()) {
                *g += w * zv;
            }
        }
        for (g, kv) in g_q_hat.iter_mut().zip(&k_hat) {
            *g = (*g - kv) / temperature / b as f64;
        }
        let g_k_hat: Vec<f64> = q_hat.iter().map(|q| -q / temperature / b as f64).collect();
        let gq = normalize_backward(&q_hat, q_norm, &g_q_hat);
        let gk = normalize_backward(&k_hat, k_norm, &g_k_hat);
        grad_query.row_mut(i).assign(&ArrayView1::from(&gq[..]));
        grad_key.row_mut(i).assign(&ArrayView1::from(&gk[..]));
    }
    Ok(InfoNceLoss {
        value: total / b as f64,
        grad_query,
        grad_key,
    })
}

/// Row-wise ℓ2 normalization, for storing keys in the queue.
pub fn normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.as_standard_layout().into_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt().max(NORM_FLOOR);
        row.mapv_inplace(|v| v / norm);
    }
    out
}
