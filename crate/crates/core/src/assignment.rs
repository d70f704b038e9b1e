//! Labeled/unlabeled dataset state, cluster class rates, pseudo-label
//! promotion, and the k-means comparison baseline.
//!
//! Samples are addressed by a global [`SampleId`]. The transport step sees
//! the training set in a fixed order: all base-labeled samples first, then
//! all unlabeled samples, each in insertion order. Cluster vectors passed to
//! [`cluster_class_rates`] use that order.

use std::collections::{HashMap, HashSet};

use ndarray::{Array2, ArrayView1};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SampleId = usize;

/// Default promotion threshold.
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenTruth {
    Id(usize),
    Ood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub id: SampleId,
    pub features: Vec<f64>,
    truth: HiddenTruth,
}

impl UnlabeledSample {
    pub fn new(id: SampleId, features: Vec<f64>, truth: HiddenTruth) -> Self {
        Self { id, features, truth }
    }

    /// Ground truth for auditing and persistence. Training and assignment
    /// code never reads it.
    pub fn hidden_truth(&self) -> HiddenTruth {
        self.truth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Promotion {
    pub id: SampleId,
    pub pseudo_label: usize,
    pub cluster: usize,
}

/// Base labeled set, unlabeled pool, and the promotions of the current epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetState {
    base_labeled: Vec<LabeledSample>,
    unlabeled: Vec<UnlabeledSample>,
    promotions: Vec<Promotion>,
    num_classes: usize,
    dim: usize,
    pub epoch: usize,
}

impl DatasetState {
    pub fn new(
        base_labeled: Vec<LabeledSample>,
        unlabeled: Vec<UnlabeledSample>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("number of ID classes must be at least 1"));
        }
        let dim = base_labeled
            .first()
            .map(|s| s.features.len())
            .or_else(|| unlabeled.first().map(|s| s.features.len()))
            .unwrap_or(0);
        let mut seen = HashSet::new();
        for (id, len) in base_labeled
            .iter()
            .map(|s| (s.id, s.features.len()))
            .chain(unlabeled.iter().map(|s| (s.id, s.features.len())))
        {
            if !seen.insert(id) {
                return Err(Error::invalid(format!("duplicate sample id {id}")));
            }
            if len != dim {
                return Err(Error::Shape {
                    expected: format!("{dim} features"),
                    got: format!("{len} features for sample {id}"),
                });
            }
        }
        for s in &base_labeled {
            if s.label >= num_classes {
                return Err(Error::invalid(format!(
                    "label {} of sample {} outside [0, {num_classes})",
                    s.label, s.id
                )));
            }
        }
        for s in &unlabeled {
            if let HiddenTruth::Id(c) = s.truth {
                if c >= num_classes {
                    return Err(Error::invalid(format!(
                        "hidden label {c} of sample {} outside [0, {num_classes})",
                        s.id
                    )));
                }
            }
        }
        Ok(Self {
            base_labeled,
            unlabeled,
            promotions: Vec::new(),
            num_classes,
            dim,
            epoch: 0,
        })
    }

    pub fn base_labeled(&self) -> &[LabeledSample] {
        &self.base_labeled
    }

    pub fn unlabeled(&self) -> &[UnlabeledSample] {
        &self.unlabeled
    }

    pub fn promotions(&self) -> &[Promotion] {
        &self.promotions
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of samples seen by the transport step.
    pub fn len(&self) -> usize {
        self.base_labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear_promotions(&mut self) {
        self.promotions.clear();
    }

    /// Sample ids in transport order.
    pub fn training_ids(&self) -> Vec<SampleId> {
        self.base_labeled
            .iter()
            .map(|s| s.id)
            .chain(self.unlabeled.iter().map(|s| s.id))
            .collect()
    }

    /// Features of every training sample, one row each, in transport order.
    pub fn training_features(&self) -> Array2<f64> {
        let rows: Vec<&[f64]> = self
            .base_labeled
            .iter()
            .map(|s| s.features.as_slice())
            .chain(self.unlabeled.iter().map(|s| s.features.as_slice()))
            .collect();
        stack_rows(&rows, self.dim)
    }

    /// Labeled samples of the current epoch: the base set plus promotions.
    pub fn effective_labeled(&self) -> Vec<(&[f64], usize)> {
        let pseudo: HashMap<SampleId, usize> =
            self.promotions.iter().map(|p| (p.id, p.pseudo_label)).collect();
        self.base_labeled
            .iter()
            .map(|s| (s.features.as_slice(), s.label))
            .chain(
                self.unlabeled
                    .iter()
                    .filter_map(|s| pseudo.get(&s.id).map(|&y| (s.features.as_slice(), y))),
            )
            .collect()
    }

    /// Unlabeled samples that were not promoted this epoch.
    pub fn effective_unlabeled(&self) -> Vec<&[f64]> {
        let promoted: HashSet<SampleId> = self.promotions.iter().map(|p| p.id).collect();
        self.unlabeled
            .iter()
            .filter(|s| !promoted.contains(&s.id))
            .map(|s| s.features.as_slice())
            .collect()
    }

    /// Current label of each training sample in transport order: base labels,
    /// pseudo-labels of promoted samples, `None` for the rest.
    fn current_labels(&self) -> Vec<Option<usize>> {
        let pseudo: HashMap<SampleId, usize> =
            self.promotions.iter().map(|p| (p.id, p.pseudo_label)).collect();
        self.base_labeled
            .iter()
            .map(|s| Some(s.label))
            .chain(self.unlabeled.iter().map(|s| pseudo.get(&s.id).copied()))
            .collect()
    }

    /// Checks the promotion invariants.
    pub fn validate(&self) -> Result<()> {
        let base: HashSet<SampleId> = self.base_labeled.iter().map(|s| s.id).collect();
        let unlabeled: HashSet<SampleId> = self.unlabeled.iter().map(|s| s.id).collect();
        let mut promoted = HashSet::new();
        for p in &self.promotions {
            if base.contains(&p.id) || !unlabeled.contains(&p.id) {
                return Err(Error::invalid(format!("promotion of non-unlabeled sample {}", p.id)));
            }
            if !promoted.insert(p.id) {
                return Err(Error::invalid(format!("sample {} promoted twice", p.id)));
            }
            if p.pseudo_label >= self.num_classes {
                return Err(Error::invalid(format!("pseudo-label {} out of range", p.pseudo_label)));
            }
        }
        Ok(())
    }
}

pub(crate) fn stack_rows(rows: &[&[f64]], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ArrayView1::from(*src));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub members: Vec<SampleId>,
    /// `rates[y]`: labeled members of class `y` over all members.
    pub rates: Vec<f64>,
    pub dominant_class: usize,
    pub dominant_rate: f64,
    pub promoted: bool,
}

/// Per-class rates of every non-empty cluster, in increasing cluster order.
pub fn cluster_class_rates(clusters: &[usize], k: usize, state: &DatasetState) -> Result<Vec<ClusterReport>> {
    if clusters.len() != state.len() {
        return Err(Error::Shape {
            expected: format!("{} cluster indices", state.len()),
            got: clusters.len().to_string(),
        });
    }
    if let Some(&c) = clusters.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("cluster index {c} outside [0, {k})")));
    }
    let ids = state.training_ids();
    let labels = state.current_labels();
    let m = state.num_classes;
    let mut members: Vec<Vec<SampleId>> = vec![Vec::new(); k];
    let mut counts = vec![vec![0usize; m]; k];
    for ((&c, &id), label) in clusters.iter().zip(&ids).zip(&labels) {
        members[c].push(id);
        if let Some(y) = label {
            counts[c][*y] += 1;
        }
    }
    Ok(members
        .into_iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (m, _))| !m.is_empty())
        .map(|(cluster, (members, counts))| {
            let size = members.len() as f64;
            let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / size).collect();
            let dominant_class = crate::numeric::argmax(&rates);
            ClusterReport {
                cluster,
                dominant_rate: rates[dominant_class],
                dominant_class,
                rates,
                members,
                promoted: false,
            }
        })
        .collect())
}

/// Replaces the epoch's promotions with every unlabeled member of each
/// cluster whose dominant rate strictly exceeds `tau`, and marks those
/// reports as promoted.
pub fn promote(reports: &mut [ClusterReport], tau: f64, state: &DatasetState) -> Result<DatasetState> {
    if !(0.5..1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0.5, 1), got {tau}")));
    }
    let unlabeled: HashSet<SampleId> = state.unlabeled.iter().map(|s| s.id).collect();
    let mut next = state.clone();
    next.promotions.clear();
    for report in reports.iter_mut() {
        report.promoted = report.dominant_rate > tau;
        if !report.promoted {
            continue;
        }
        next.promotions.extend(
            report
                .members
                .iter()
                .filter(|id| unlabeled.contains(id))
                .map(|&id| Promotion {
                    id,
                    pseudo_label: report.dominant_class,
                    cluster: report.cluster,
                }),
        );
    }
    next.validate()?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyAudit {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Compares the epoch's pseudo-labels with the hidden truth. Promoted OOD
/// samples always count as wrong.
pub fn assignment_accuracy(state: &DatasetState) -> AccuracyAudit {
    let truth: HashMap<SampleId, HiddenTruth> = state.unlabeled.iter().map(|s| (s.id, s.truth)).collect();
    let correct = state
        .promotions
        .iter()
        .filter(|p| truth.get(&p.id) == Some(&HiddenTruth::Id(p.pseudo_label)))
        .count();
    let total = state.promotions.len();
    AccuracyAudit {
        correct,
        total,
        accuracy: if total == 0 { 1.0 } else { correct as f64 / total as f64 },
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Runs at most `iters` rounds and
/// stops early once assignments are stable. Clusters that lose all members
/// are reseeded with the point farthest from its current centroid.
pub fn kmeans_baseline(features: &Array2<f64>, k: usize, iters: usize, seed: u64) -> Result<Vec<usize>> {
    let n = features.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n < k {
        return Err(Error::invalid(format!("k-means needs at least k = {k} points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(features, k, &mut rng);
    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0; n];
    for round in 0..iters.max(1) {
        let mut changed = false;
        for (i, row) in features.rows().into_iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(row, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                changed = true;
            }
            assign[i] = best;
            dist[i] = best_d;
        }
        if round > 0 && !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, row) in features.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assign[i]);
            s += &row;
            counts[assign[i]] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = &sums.row(c) / count as f64;
                centroids.row_mut(c).assign(&mean);
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(b.cmp(&a)))
                    .expect("n >= k >= 1");
                centroids.row_mut(c).assign(&features.row(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok(assign)
}

fn kmeans_pp(features: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = features.nrows();
    let mut centroids = Array2::zeros((k, features.ncols()));
    let first = rand::Rng::random_range(rng, 0..n);
    centroids.row_mut(0).assign(&features.row(first));
    let mut d2: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, features.row(first)))
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a centroid
            Err(_) => rand::Rng::random_range(rng, 0..n),
        };
        centroids.row_mut(c).assign(&features.row(pick));
        for (i, r) in features.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, features.row(pick)));
        }
    }
    centroids
}

/// Within-cluster sum of squared distances to the cluster means.
pub fn within_cluster_sse(features: &Array2<f64>, assign: &[usize]) -> f64 {
    let k = assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = Array2::<f64>::zeros((k, features.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &c) in features.rows().into_iter().zip(assign) {
        let mut s = sums.row_mut(c);
        s += &row;
        counts[c] += 1;
    }
    features
        .rows()
        .into_iter()
        .zip(assign)
        .map(|(row, &c)| {
            let mean = &sums.row(c) / counts[c] as f64;
            sq_dist(row, mean.view())
        })
        .sum()
}
