//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scood_ot::transport::{LogitMatrix, RowKind, TransportProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// Energy-weighted transport problem built from standard normal logits.
pub fn random_problem(k: usize, n: usize, epsilon: f64, rng: &mut ChaCha8Rng) -> TransportProblem {
    let logits = LogitMatrix::new(normal_matrix(k, n, 1.0, rng), RowKind::Cluster).unwrap();
    TransportProblem::from_logits(&logits, epsilon).unwrap().0
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Contribution of one column with `q` on row 0 and `beta - q` on row 1.
fn column_term(q: f64, beta: f64, log_c0: f64, log_c1: f64, epsilon: f64) -> f64 {
    let r = (beta - q).max(0.0);
    q * log_c0 + r * log_c1 - epsilon * (xlogx(q) + xlogx(r))
}

fn grid(upper: f64, step: f64) -> Vec<f64> {
    let n = (upper / step).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if *g.last().unwrap() < upper {
        g.push(upper);
    }
    g
}

/// Maximum of `<Q, log C> - ε Σ Q log Q` over the 2×N transport polytope
/// (N ∈ {2, 3}) by exhaustive search on a grid of the free parameters.
/// Row 0 of every column but one (the dependent column) is gridded; the rest
/// follows from the marginals. Every choice of dependent column is searched,
/// so optima with saturated columns are hit exactly on the grid boundary.
pub fn brute_force_objective(cost: &Array2<f64>, alpha: &[f64], beta: &[f64], epsilon: f64, step: f64) -> f64 {
    let (k, n) = cost.dim();
    assert_eq!(k, 2, "oracle covers two clusters only");
    assert!(n == 2 || n == 3, "oracle covers N = 2 or 3");
    let lc = cost.mapv(f64::ln);
    let term = |i: usize, q: f64| column_term(q, beta[i], lc[[0, i]], lc[[1, i]], epsilon);
    let dependent = |d: usize, used: f64| -> Option<f64> {
        let q = alpha[0] - used;
        if q < -1e-15 || q > beta[d] + 1e-15 {
            None
        } else {
            Some(term(d, q.clamp(0.0, beta[d])))
        }
    };
    let mut best = f64::NEG_INFINITY;
    for d in 0..n {
        let free: Vec<usize> = (0..n).filter(|&i| i != d).collect();
        let g0 = grid(beta[free[0]], step);
        if n == 2 {
            for q0 in g0 {
                if let Some(t) = dependent(d, q0) {
                    best = best.max(term(free[0], q0) + t);
                }
            }
            continue;
        }
        let g1 = grid(beta[free[1]], step);
        let t1: Vec<f64> = g1.iter().map(|&q| term(free[1], q)).collect();
        for q0 in g0 {
            let t0 = term(free[0], q0);
            for (&q1, &t) in g1.iter().zip(&t1) {
                if let Some(td) = dependent(d, q0 + q1) {
                    best = best.max(t0 + t + td);
                }
            }
        }
    }
    best
}

/// Pairwise Mann-Whitney statistic: ID wins count 1, ties 0.5.
pub fn mann_whitney(id: &[f64], ood: &[f64]) -> f64 {
    let mut total = 0.0;
    for &a in id {
        for &b in ood {
            total += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    total / (id.len() * ood.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    /// Cross-entropy on labeled rows.
    Cls,
    /// Cross-entropy to uniform on unlabeled rows.
    Unif,
    /// InfoNCE between two views against a fixed queue.
    InfoNce,
}

/// Relative error `‖g_a − g_fd‖ / max(‖g_a‖, ‖g_fd‖)` of the analytic
/// gradient of one loss term over every trainable parameter, against
/// central differences with step `h`. Dimensions are drawn from the seed with
/// d, h, p ≤ 16 and B ≤ 8; the classifier head and all biases are
/// randomized so that every path carries gradient.
pub fn gradient_check(seed: u64, term: LossTerm, step: f64) -> f64 {
    use scood_ot::learner::loss::Role;
    use scood_ot::learner::network::InputScaling;
    use scood_ot::learner::train::batch_loss;
    use scood_ot::learner::{MemoryQueue, Network, NetworkShape};

    let mut rng = rng(seed);
    let shape = NetworkShape {
        input: rng.random_range(1..=16),
        hidden: rng.random_range(2..=16),
        classes: rng.random_range(2..=8),
        clusters: rng.random_range(2..=16),
        projection: rng.random_range(2..=16),
    };
    let b = rng.random_range(1..=8);
    let mut net = Network::init(shape, rng.random());
    net.cls.w = normal_matrix(shape.classes, shape.hidden, 0.5, &mut rng);
    // Nonzero biases keep the check away from ReLU kinks and zero-norm
    // projections, which occur exactly at zero pre-activations.
    for layer in [&mut net.enc1, &mut net.enc2, &mut net.cls, &mut net.ot, &mut net.proj1, &mut net.proj2] {
        let n = layer.b.len();
        layer.b = normal_matrix(1, n, 0.5, &mut rng).row(0).to_owned();
    }
    net.input = InputScaling::fitted(&normal_matrix(32, shape.input, 2.0, &mut rng));

    let x0 = normal_matrix(b, shape.input, 2.0, &mut rng);
    let x1 = &x0 + &normal_matrix(b, shape.input, 0.3, &mut rng);
    let (roles, gamma, lambda) = match term {
        LossTerm::Cls => (
            (0..b).map(|_| Role::Labeled(rng.random_range(0..shape.classes))).collect(),
            0.0,
            0.0,
        ),
        LossTerm::Unif => (vec![Role::Unlabeled; b], 1.0, 0.0),
        LossTerm::InfoNce => (vec![Role::Unlabeled; b], 0.0, 1.0),
    };
    let roles: Vec<Role> = roles;
    let mut queue = MemoryQueue::new(b + 8, shape.projection);
    queue.push(&normal_matrix(8, shape.projection, 1.0, &mut rng)).unwrap();
    queue.push(&net.forward(&x1).unwrap().proj).unwrap();
    let tc = 0.5;

    let loss = |n: &Network| {
        batch_loss(n, &x0, Some(&x1), &roles, Some(&queue), gamma, lambda, tc)
            .unwrap()
            .0
            .total
    };
    let (_, grads) = batch_loss(&net, &x0, Some(&x1), &roles, Some(&queue), gamma, lambda, tc).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = net.clone();
    for t in 0..12 {
        for i in 0..net.tensors()[t].len() {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let up = loss(&probe);
            probe.tensors_mut()[t][i] = orig - step;
            let down = loss(&probe);
            probe.tensors_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
