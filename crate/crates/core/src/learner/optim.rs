//! SGD with momentum and weight decay, and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::learner::network::Network;

/// Learning rate for `epoch` (0-based) of `total_epochs`: starts at `base`
/// and reaches zero at the final epoch.
pub fn cosine_lr(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs <= 1 {
        return base;
    }
    let progress = epoch.min(total_epochs - 1) as f64 / (total_epochs - 1) as f64;
    0.5 * base * (1.0 + (PI * progress).cos())
}

/// `v ← μ v + (g + wd·w)`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Network,
}

impl Sgd {
    pub fn new(params: &Network, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Network, grads: &Network, lr: f64) {
        let grads = grads.tensors();
        let velocity = self.velocity.tensors_mut();
        for ((w, v), g) in params.tensors_mut().into_iter().zip(velocity).zip(grads) {
            for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g + self.weight_decay * *w;
                *w -= lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::network::NetworkShape;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 60), 0.1);
        assert!(cosine_lr(0.1, 59, 60).abs() < 1e-9);
        assert!((cosine_lr(0.1, 30, 61) - 0.05).abs() < 1e-12);
        assert_eq!(cosine_lr(0.1, 0, 1), 0.1);
        let lrs: Vec<f64> = (0..60).map(|e| cosine_lr(0.1, e, 60)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn momentum_accumulates() {
        let shape = NetworkShape {
            input: 1,
            hidden: 1,
            classes: 1,
            clusters: 1,
            projection: 1,
        };
        let mut net = Network::init(shape, 0).zeros_like();
        let mut grads = net.zeros_like();
        grads.cls.b[0] = 1.0;
        let mut sgd = Sgd::new(&net, 0.9, 0.0);
        sgd.step(&mut net, &grads, 0.1);
        assert!((net.cls.b[0] + 0.1).abs() < 1e-15);
        sgd.step(&mut net, &grads, 0.1);
        // second velocity 0.9 + 1 = 1.9
        assert!((net.cls.b[0] + 0.1 + 0.19).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let shape = NetworkShape {
            input: 1,
            hidden: 1,
            classes: 1,
            clusters: 1,
            projection: 1,
        };
        let mut net = Network::init(shape, 0).zeros_like();
        net.cls.b[0] = 2.0;
        let grads = net.zeros_like();
        let mut sgd = Sgd::new(&net, 0.0, 0.5);
        sgd.step(&mut net, &grads, 0.1);
        assert!((net.cls.b[0] - 1.9).abs() < 1e-15);
    }
}
