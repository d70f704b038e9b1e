//! OOD scores from classifier logits and the detection metrics used to
//! evaluate them.
//!
//! Scores are oriented so that larger means "more in-distribution"; a sample
//! is declared ID when its score is `>= θ`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax_into};
use crate::transport::LogitMatrix;

/// Default T-energy temperature.
pub const DEFAULT_TEMPERATURE: f64 = 1000.0;

/// FPR levels at which CCR is reported.
pub const DEFAULT_FPR_LEVELS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Maximum softmax probability.
    Msp,
    /// `log Σ exp(l)`.
    Energy,
    /// `T · log Σ exp(l / T)`.
    TEnergy,
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(ScoreMethod::Msp),
            "energy" => Ok(ScoreMethod::Energy),
            "tenergy" | "t_energy" | "t-energy" => Ok(ScoreMethod::TEnergy),
            other => Err(Error::invalid(format!("unknown score method {other:?}"))),
        }
    }
}

impl ScoreMethod {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Msp => "msp",
            ScoreMethod::Energy => "energy",
            ScoreMethod::TEnergy => "tenergy",
        }
    }
}

/// `T · log Σ_m exp(l_m / T)` for one sample.
pub fn t_energy(logits: &[f64], temperature: f64) -> f64 {
    temperature * log_sum_exp(logits.iter().map(|l| l / temperature))
}

/// One score per sample (column) of a class-logit matrix.
pub fn ood_score(logits: &LogitMatrix, method: ScoreMethod, temperature: f64) -> Result<Vec<f64>> {
    if logits.rows() < 2 {
        return Err(Error::invalid(format!(
            "scoring needs at least 2 classes, got {}",
            logits.rows()
        )));
    }
    if method == ScoreMethod::TEnergy && !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let values = logits.values();
    let mut probs = vec![0.0; logits.rows()];
    Ok(values
        .columns()
        .into_iter()
        .map(|col| {
            let col = col.to_vec();
            match method {
                ScoreMethod::Msp => {
                    softmax_into(&col, &mut probs);
                    probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                }
                ScoreMethod::Energy => log_sum_exp(col.iter().copied()),
                // T = 1 reduces to the plain energy bit for bit.
                ScoreMethod::TEnergy if temperature == 1.0 => log_sum_exp(col.iter().copied()),
                ScoreMethod::TEnergy => t_energy(&col, temperature),
            }
        })
        .collect())
}

/// CCR at one FPR level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcrAtFpr {
    pub fpr: f64,
    pub ccr: f64,
    /// Set when there are fewer than `1/fpr` OOD samples, so the level
    /// cannot be resolved and only the FPR = 0 threshold qualifies.
    pub unresolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub fpr_at_tpr95: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub ccr_at_fpr: Vec<CcrAtFpr>,
    pub acc: f64,
}

fn sort_desc(scores: &mut [f64]) {
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
}

/// Walks the merged score list from the highest score down, yielding the
/// cumulative (positives, negatives) counts after each group of tied scores.
fn tie_groups(pos: &[f64], neg: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut merged: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    merged.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut groups = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut idx = 0;
    while idx < merged.len() {
        let threshold = merged[idx].0;
        while idx < merged.len() && merged[idx].0 == threshold {
            if merged[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        groups.push((threshold, tp, fp));
    }
    groups
}

/// Area under the ROC step curve; tied groups contribute a trapezoid, which
/// equals the Mann-Whitney statistic with ties counted as 1/2.
pub fn auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    let mut area = 0.0;
    for (_, tp, fp) in tie_groups(pos, neg) {
        let d_fp = (fp - prev_fp) as f64;
        let d_tp = (tp - prev_tp) as f64;
        area += d_fp * (prev_tp as f64 + 0.5 * d_tp);
        prev_tp = tp;
        prev_fp = fp;
    }
    area / (pos.len() as f64 * neg.len() as f64)
}

/// Average precision with `pos` as the positive class: Σ ΔR · P over
/// unique thresholds, no interpolation.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> f64 {
    let n_pos = pos.len() as f64;
    let mut prev_tp = 0usize;
    let mut ap = 0.0;
    for (_, tp, fp) in tie_groups(pos, neg) {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (tp - prev_tp) as f64 * precision;
        }
        prev_tp = tp;
    }
    ap / n_pos
}

/// FPR at the largest threshold keeping TPR >= 95%.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr: f64) -> f64 {
    let mut sorted = id.to_vec();
    sort_desc(&mut sorted);
    let needed = ((tpr * id.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = sorted[needed.min(sorted.len()) - 1];
    ood.iter().filter(|&&s| s >= threshold).count() as f64 / ood.len() as f64
}

fn ccr_at(id: &[f64], correct: &[bool], ood: &[f64], level: f64) -> CcrAtFpr {
    let n_ood = ood.len() as f64;
    let unresolved = n_ood < 1.0 / level;
    // Candidate thresholds: every observed score, plus +inf (nothing accepted).
    let mut candidates: Vec<f64> = id.iter().chain(ood).copied().collect();
    sort_desc(&mut candidates);
    candidates.dedup();
    let mut ood_sorted = ood.to_vec();
    sort_desc(&mut ood_sorted);

    // FPR grows as θ decreases; walk down and keep the last admissible θ.
    let mut theta = f64::INFINITY;
    let mut n_above = 0;
    for &c in &candidates {
        while n_above < ood_sorted.len() && ood_sorted[n_above] >= c {
            n_above += 1;
        }
        if n_above as f64 / n_ood <= level {
            theta = c;
        } else {
            break;
        }
    }
    let hits = id
        .iter()
        .zip(correct)
        .filter(|(&s, &ok)| ok && s >= theta)
        .count();
    CcrAtFpr {
        fpr: level,
        ccr: hits as f64 / id.len() as f64,
        unresolved,
    }
}

pub fn detection_metrics(
    id_scores: &[f64],
    ood_scores: &[f64],
    id_predictions: &[usize],
    id_truth: &[usize],
    fpr_levels: &[f64],
) -> Result<ScoreReport> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::invalid("both ID and OOD score sets must be non-empty"));
    }
    if id_predictions.len() != id_scores.len() || id_truth.len() != id_scores.len() {
        return Err(Error::Shape {
            expected: format!("{} ID predictions and labels", id_scores.len()),
            got: format!("{} predictions, {} labels", id_predictions.len(), id_truth.len()),
        });
    }
    if let Some(s) = id_scores.iter().chain(ood_scores).find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("scores must be finite, found {s}")));
    }
    if let Some(l) = fpr_levels.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
        return Err(Error::invalid(format!("FPR level must lie in (0, 1], got {l}")));
    }
    let correct: Vec<bool> = id_predictions.iter().zip(id_truth).map(|(p, t)| p == t).collect();
    let neg_id: Vec<f64> = id_scores.iter().map(|s| -s).collect();
    let neg_ood: Vec<f64> = ood_scores.iter().map(|s| -s).collect();
    Ok(ScoreReport {
        fpr_at_tpr95: fpr_at_tpr(id_scores, ood_scores, 0.95),
        auroc: auroc(id_scores, ood_scores),
        aupr_in: average_precision(id_scores, ood_scores),
        aupr_out: average_precision(&neg_ood, &neg_id),
        ccr_at_fpr: fpr_levels
            .iter()
            .map(|&l| ccr_at(id_scores, &correct, ood_scores, l))
            .collect(),
        acc: correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64,
    })
}

/// Equal-width histogram over the joint range of both score sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub id_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
}

pub fn score_histogram(id: &[f64], ood: &[f64], bins: usize) -> ScoreHistogram {
    let bins = bins.max(1);
    let lo = id.iter().chain(ood).copied().fold(f64::INFINITY, f64::min);
    let hi = id.iter().chain(ood).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let count = |scores: &[f64]| {
        let mut counts = vec![0; bins];
        for &s in scores {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
    };
    ScoreHistogram {
        edges,
        id_counts: count(id),
        ood_counts: count(ood),
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array2};

    use super::*;
    use crate::transport::RowKind;

    fn class_logits(m: Array2<f64>) -> LogitMatrix {
        LogitMatrix::new(m, RowKind::Class).unwrap()
    }

    #[test]
    fn score_examples() {
        let l = class_logits(arr2(&[[0.0, 3.0], [0.0, -1.0]]));
        assert_eq!(ood_score(&l, ScoreMethod::Msp, 1.0).unwrap()[0], 0.5);
        assert_eq!(
            ood_score(&l, ScoreMethod::TEnergy, 1.0).unwrap(),
            ood_score(&l, ScoreMethod::Energy, 1.0).unwrap()
        );

        let zeros = class_logits(Array2::zeros((10, 1)));
        let s = ood_score(&zeros, ScoreMethod::TEnergy, 1000.0).unwrap();
        assert_abs_diff_eq!(s[0], 1000.0 * 10f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(s[0], 2302.585, epsilon = 1e-3);
    }

    #[test]
    fn scoring_rejects_bad_inputs() {
        let one_class = class_logits(Array2::zeros((1, 3)));
        assert!(ood_score(&one_class, ScoreMethod::Energy, 1.0).is_err());
        let l = class_logits(Array2::zeros((2, 3)));
        assert!(ood_score(&l, ScoreMethod::TEnergy, 0.0).is_err());
        assert!("bogus".parse::<ScoreMethod>().is_err());
    }

    #[test]
    fn perfect_separation() {
        let r = detection_metrics(&[2.0, 3.0], &[0.0, 1.0], &[0, 1], &[0, 1], &DEFAULT_FPR_LEVELS).unwrap();
        assert_eq!(r.auroc, 1.0);
        assert_eq!(r.fpr_at_tpr95, 0.0);
        assert_eq!(r.aupr_in, 1.0);
        assert_eq!(r.aupr_out, 1.0);
        assert_eq!(r.acc, 1.0);
        let at_01 = r.ccr_at_fpr.iter().find(|c| c.fpr == 0.1).unwrap();
        assert_eq!(at_01.ccr, 1.0);
        assert!(at_01.unresolved);
    }

    #[test]
    fn ties_and_pairwise_counts() {
        assert_eq!(auroc(&[1.0], &[1.0]), 0.5);
        // pairwise: 3 beats both, 2 and 1 beat only 0.5 -> 4 of 6, no ties
        assert_eq!(auroc(&[3.0, 2.0, 1.0], &[2.5, 0.5]), 4.0 / 6.0);
        assert_eq!(auroc(&[3.0, 2.5, 1.0], &[2.5, 0.5]), 4.5 / 6.0);
    }

    #[test]
    fn fpr95_uses_the_largest_qualifying_threshold() {
        // 20 ID scores 1..=20: TPR >= 0.95 needs 19 accepted, so θ = 2.
        let id: Vec<f64> = (1..=20).map(f64::from).collect();
        let ood = [1.5, 2.0, 2.5, 0.0];
        assert_eq!(fpr_at_tpr(&id, &ood, 0.95), 0.5);
    }

    #[test]
    fn aupr_small_case() {
        // ranking: id 3 (P=1), ood 2.5, id 2 (P=2/3), id 1 (P=3/4), ood 0.5
        let ap = average_precision(&[3.0, 2.0, 1.0], &[2.5, 0.5]);
        assert_abs_diff_eq!(ap, (1.0 + 2.0 / 3.0 + 0.75) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ccr_counts_only_correct_accepted_samples() {
        let id = [5.0, 4.0, 3.0, 2.0];
        let ood: Vec<f64> = (0..10).map(|i| if i == 0 { 3.5 } else { -1.0 }).collect();
        // FPR <= 0.1 admits θ down to the 3.5 OOD point but not below -1
        let r = detection_metrics(&id, &ood, &[0, 1, 0, 0], &[0, 0, 0, 0], &[0.1]).unwrap();
        let c = r.ccr_at_fpr[0];
        assert!(!c.unresolved);
        // accepted: 5, 4, 3, 2 (θ = 2.0 is the smallest with FPR 0.1); correct: 3 of 4
        assert_abs_diff_eq!(c.ccr, 0.75, epsilon = 1e-15);
        assert_eq!(r.acc, 0.75);
    }

    #[test]
    fn empty_sides_rejected() {
        assert!(detection_metrics(&[], &[1.0], &[], &[], &[0.1]).is_err());
        assert!(detection_metrics(&[1.0], &[], &[0], &[0], &[0.1]).is_err());
        assert!(detection_metrics(&[1.0], &[0.0], &[0, 1], &[0], &[0.1]).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = score_histogram(&[0.0, 1.0, 2.0], &[2.0, 3.0], 4);
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.id_counts.iter().sum::<usize>(), 3);
        assert_eq!(h.ood_counts.iter().sum::<usize>(), 2);
        assert_eq!(h.ood_counts[3], 1);
    }
}
