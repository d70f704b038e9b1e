//! The alternating training loop: one epoch of representation learning on
//! the current labeled/unlabeled split, then a frozen-parameter assignment
//! pass that recomputes the pseudo-labels used by the next epoch.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{
    assignment_accuracy, cluster_class_rates, kmeans_baseline, promote, stack_rows, AccuracyAudit,
    DatasetState,
};
use crate::data::TestSets;
use crate::error::{Error, Result};
use crate::learner::augment::Augmentation;
use crate::learner::loss::{cls_unif_loss, infonce_loss, LossBreakdown, Role};
use crate::learner::network::{InputScaling, Network, NetworkShape, OutputGrads};
use crate::learner::optim::{cosine_lr, Sgd};
use crate::learner::queue::MemoryQueue;
use crate::numeric::argmax;
use crate::scoring::{detection_metrics, ood_score, ScoreMethod, ScoreReport, DEFAULT_FPR_LEVELS};
use crate::transport::{energy_transport, KernelExponent, LogitMatrix, RowKind, SinkhornOptions, Stabilization};

/// How unlabeled samples are grouped before class-rate promotion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assigner {
    /// Energy-weighted Sinkhorn transport on OT-head logits.
    EnergyTransport,
    /// k-means on encoder features.
    KMeans,
    /// No assignment step; nothing is ever promoted.
    None,
}

impl std::str::FromStr for Assigner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "et" | "energy_transport" => Ok(Assigner::EnergyTransport),
            "kmeans" => Ok(Assigner::KMeans),
            "none" => Ok(Assigner::None),
            other => Err(Error::invalid(format!(
                "unknown assigner {other:?} (expected et, kmeans or none)"
            ))),
        }
    }
}

impl Assigner {
    pub fn name(self) -> &'static str {
        match self {
            Assigner::EnergyTransport => "et",
            Assigner::KMeans => "kmeans",
            Assigner::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub hidden: usize,
    pub projection: usize,
    pub clusters: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub contrastive_temperature: f64,
    pub queue_batches: usize,
    /// Jitter standard deviation as a fraction of each feature's std.
    pub aug_jitter: f64,
    /// Half-width of the random scale interval around 1.
    pub aug_scale: f64,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub exponent: KernelExponent,
    pub tau: f64,
    pub temperature: f64,
    pub score_method: ScoreMethod,
    pub assigner: Assigner,
    /// When false the unlabeled pool is ignored entirely (supervised baseline).
    pub use_unlabeled: bool,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_labeled: 32,
            batch_unlabeled: 64,
            hidden: 64,
            projection: 32,
            clusters: 16,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            gamma: 0.5,
            lambda: 0.3,
            contrastive_temperature: 1.0,
            queue_batches: 8,
            aug_jitter: 0.1,
            aug_scale: 0.2,
            epsilon: crate::transport::DEFAULT_EPSILON,
            sinkhorn_iters: 50,
            sinkhorn_tol: crate::transport::DEFAULT_TOL,
            exponent: KernelExponent::InverseEpsilon,
            tau: crate::assignment::DEFAULT_TAU,
            temperature: crate::scoring::DEFAULT_TEMPERATURE,
            score_method: ScoreMethod::TEnergy,
            assigner: Assigner::EnergyTransport,
            use_unlabeled: true,
            kmeans_iters: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Cross-entropy on the labeled set only: no unlabeled data, no
    /// assignment, no uniformity or contrastive terms.
    pub fn supervised_baseline(mut self) -> Self {
        self.use_unlabeled = false;
        self.assigner = Assigner::None;
        self.gamma = 0.0;
        self.lambda = 0.0;
        self
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_labeled", self.batch_labeled),
            ("batch_unlabeled", self.batch_unlabeled),
            ("hidden", self.hidden),
            ("projection", self.projection),
            ("clusters", self.clusters),
            ("queue_batches", self.queue_batches),
            ("sinkhorn_iters", self.sinkhorn_iters),
            ("kmeans_iters", self.kmeans_iters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.clusters < num_classes {
            return Err(Error::invalid(format!(
                "clusters K = {} must be at least the number of classes M = {num_classes}",
                self.clusters
            )));
        }
        let finite_nonneg = [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("aug_jitter", self.aug_jitter),
            ("aug_scale", self.aug_scale),
        ];
        for (name, v) in finite_nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.aug_scale >= 1.0 {
            return Err(Error::invalid("aug_scale must be below 1"));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("sinkhorn_tol", self.sinkhorn_tol),
            ("temperature", self.temperature),
            ("contrastive_temperature", self.contrastive_temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.5..1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must lie in [0.5, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Outcome of one frozen-parameter assignment pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSummary {
    pub promotions: usize,
    pub promoted_clusters: usize,
    pub nonempty_clusters: usize,
    pub audit: AccuracyAudit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinkhorn: Option<SinkhornSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSummary {
    pub iterations: usize,
    pub converged: bool,
    pub log_domain: bool,
    pub row_marginal_error: f64,
    pub col_marginal_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    /// Mean over the epoch's steps.
    pub loss: LossBreakdown,
    pub assignment: Option<AssignmentSummary>,
    pub test: ScoreReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub network: Network,
    pub state: DatasetState,
}

/// Loss and parameter gradients for one batch.
///
/// `view0` feeds the classifier losses and the InfoNCE queries, `view1` the
/// InfoNCE keys. `queue` must already hold the detached keys of this batch.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    net: &Network,
    view0: &Array2<f64>,
    view1: Option<&Array2<f64>>,
    roles: &[Role],
    queue: Option<&MemoryQueue>,
    gamma: f64,
    lambda: f64,
    contrastive_temperature: f64,
) -> Result<(LossBreakdown, Network)> {
    let mut grads = net.zeros_like();
    let (out0, cache0) = net.forward_cached(view0)?;
    let cu = cls_unif_loss(&out0.logits_cls, roles)?;
    let mut d_cls = cu.grad_cls;
    d_cls.scaled_add(gamma, &cu.grad_unif);

    let mut l_rep = 0.0;
    let mut up0 = OutputGrads {
        logits_cls: Some(d_cls),
        ..Default::default()
    };
    if lambda > 0.0 {
        let (view1, queue) = match (view1, queue) {
            (Some(v), Some(q)) => (v, q),
            _ => return Err(Error::invalid("contrastive term needs a second view and a queue")),
        };
        let (out1, cache1) = net.forward_cached(view1)?;
        let nce = infonce_loss(&out0.proj, &out1.proj, queue, contrastive_temperature)?;
        l_rep = nce.value;
        up0.proj = Some(nce.grad_query * lambda);
        let up1 = OutputGrads {
            proj: Some(nce.grad_key * lambda),
            ..Default::default()
        };
        net.backward(&cache1, &up1, &mut grads);
    }
    net.backward(&cache0, &up0, &mut grads);
    Ok((LossBreakdown::new(cu.l_cls, cu.l_unif, l_rep, gamma, lambda), grads))
}

/// Runs the frozen network over every training sample, groups them, and
/// replaces the state's promotions.
pub fn assignment_pass(
    net: &Network,
    state: &mut DatasetState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<AssignmentSummary> {
    state.clear_promotions();
    let features = state.training_features();
    let out = net.forward(&features)?;
    let (clusters, sinkhorn) = match cfg.assigner {
        Assigner::None => {
            return Ok(AssignmentSummary {
                promotions: 0,
                promoted_clusters: 0,
                nonempty_clusters: 0,
                audit: assignment_accuracy(state),
                sinkhorn: None,
            })
        }
        Assigner::EnergyTransport => {
            let logits = LogitMatrix::from_sample_rows(&out.logits_ot, RowKind::Cluster)?;
            let opts = SinkhornOptions {
                tol: cfg.sinkhorn_tol,
                max_iter: cfg.sinkhorn_iters,
                exponent: cfg.exponent,
                stabilization: Stabilization::Auto,
            };
            let et = energy_transport(&logits, cfg.epsilon, &opts)?;
            let a = &et.assignment;
            let summary = SinkhornSummary {
                iterations: a.iterations_used,
                converged: a.converged,
                log_domain: a.log_domain,
                row_marginal_error: a.row_marginal_error,
                col_marginal_error: a.col_marginal_error,
            };
            (et.clusters, Some(summary))
        }
        Assigner::KMeans => {
            let seed = cfg.seed.wrapping_add(0x6b6d_6561_6e73).wrapping_add(epoch as u64);
            (kmeans_baseline(&out.z, cfg.clusters, cfg.kmeans_iters, seed)?, None)
        }
    };
    let mut reports = cluster_class_rates(&clusters, cfg.clusters, state)?;
    *state = promote(&mut reports, cfg.tau, state)?;
    Ok(AssignmentSummary {
        promotions: state.promotions().len(),
        promoted_clusters: reports.iter().filter(|r| r.promoted).count(),
        nonempty_clusters: reports.len(),
        audit: assignment_accuracy(state),
        sinkhorn,
    })
}

/// Scores the test sets with the classifier head.
pub fn evaluate(net: &Network, test: &TestSets, cfg: &TrainConfig) -> Result<ScoreReport> {
    let id_out = net.forward(&test.id_features)?;
    let ood_out = net.forward(&test.ood_features)?;
    let id_logits = LogitMatrix::from_sample_rows(&id_out.logits_cls, RowKind::Class)?;
    let ood_logits = LogitMatrix::from_sample_rows(&ood_out.logits_cls, RowKind::Class)?;
    let id_scores = ood_score(&id_logits, cfg.score_method, cfg.temperature)?;
    let ood_scores = ood_score(&ood_logits, cfg.score_method, cfg.temperature)?;
    let predictions: Vec<usize> = id_out
        .logits_cls
        .rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()))
        .collect();
    detection_metrics(&id_scores, &ood_scores, &predictions, &test.id_labels, &DEFAULT_FPR_LEVELS)
}

struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains for `cfg.epochs` epochs, alternating representation learning and
/// assignment. The assignment at the end of epoch `t` defines the labeled
/// set of epoch `t + 1`; epoch 0 trains on the base labeled set.
pub fn train_run(cfg: &TrainConfig, state: DatasetState, test: &TestSets) -> Result<TrainOutcome> {
    cfg.validate(state.num_classes())?;
    if state.base_labeled().is_empty() {
        return Err(Error::invalid("training needs at least one labeled sample"));
    }
    let mut state = state;
    state.clear_promotions();
    let shape = NetworkShape {
        input: state.dim(),
        hidden: cfg.hidden,
        classes: state.num_classes(),
        clusters: cfg.clusters,
        projection: cfg.projection,
    };
    let mut net = Network::init(shape, cfg.seed);
    net.input = InputScaling::fitted(&state.training_features());
    let mut sgd = Sgd::new(&net, cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let augment = Augmentation::fitted(&state.training_features(), cfg.aug_jitter, cfg.aug_scale);
    let unlabeled_batch = if cfg.use_unlabeled { cfg.batch_unlabeled } else { 0 };
    let mut queue = MemoryQueue::for_batches(cfg.queue_batches, cfg.batch_labeled + unlabeled_batch, cfg.projection);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let labeled = state.effective_labeled();
        let unlabeled = if cfg.use_unlabeled { state.effective_unlabeled() } else { Vec::new() };
        let steps = (labeled.len() / cfg.batch_labeled).max(1);
        let mut lab_cycle = Cycle::new(labeled.len(), &mut rng);
        let mut unl_cycle = Cycle::new(unlabeled.len(), &mut rng);
        let mut sum = LossBreakdown::new(0.0, 0.0, 0.0, cfg.gamma, cfg.lambda);

        for _ in 0..steps {
            let li = lab_cycle.take(cfg.batch_labeled, &mut rng);
            let ui = unl_cycle.take(unlabeled_batch, &mut rng);
            let rows: Vec<&[f64]> = li
                .iter()
                .map(|&i| labeled[i].0)
                .chain(ui.iter().map(|&i| unlabeled[i]))
                .collect();
            let roles: Vec<Role> = li
                .iter()
                .map(|&i| Role::Labeled(labeled[i].1))
                .chain(ui.iter().map(|_| Role::Unlabeled))
                .collect();
            let x = stack_rows(&rows, state.dim());
            let view0 = augment.apply(&x, &mut rng);
            let (view1, queue_ref) = if cfg.lambda > 0.0 {
                let view1 = augment.apply(&x, &mut rng);
                queue.push(&net.forward(&view1)?.proj)?;
                (Some(view1), Some(&queue))
            } else {
                (None, None)
            };
            let (loss, grads) = batch_loss(
                &net,
                &view0,
                view1.as_ref(),
                &roles,
                queue_ref,
                cfg.gamma,
                cfg.lambda,
                cfg.contrastive_temperature,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("non-finite loss {:?}", loss),
                });
            }
            sgd.step(&mut net, &grads, lr);
            if !net.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite parameters after update".into(),
                });
            }
            sum.l_cls += loss.l_cls;
            sum.l_unif += loss.l_unif;
            sum.l_rep += loss.l_rep;
        }
        let n = steps as f64;
        let mean = LossBreakdown::new(sum.l_cls / n, sum.l_unif / n, sum.l_rep / n, cfg.gamma, cfg.lambda);
        let (n_lab, n_unl) = (labeled.len(), unlabeled.len());

        let assignment = match cfg.assigner {
            Assigner::None => None,
            _ => Some(assignment_pass(&net, &mut state, cfg, epoch)?),
        };
        let test_report = evaluate(&net, test, cfg)?;
        log.push(EpochRecord {
            epoch,
            lr,
            steps,
            labeled: n_lab,
            unlabeled: n_unl,
            loss: mean,
            assignment,
            test: test_report,
        });
    }
    Ok(TrainOutcome {
        log,
        network: net,
        state,
    })
}
