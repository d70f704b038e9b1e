//! Flat `key = value` run configuration.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Keys are the field names of [`TrainConfig`]. Values given on the
//! command line override values read from a file, which override the
//! built-in defaults.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::TrainConfig;

/// One configurable setting: key, the symbol it corresponds to in the
/// method's notation, and a short description.
#[derive(Debug, Clone, Copy)]
pub struct Field {
    pub key: &'static str,
    pub symbol: &'static str,
    pub help: &'static str,
}

const fn field(key: &'static str, symbol: &'static str, help: &'static str) -> Field {
    Field { key, symbol, help }
}

pub const FIELDS: [Field; 26] = [
    field("epochs", "t", "training epochs"),
    field("batch_labeled", "B_L", "labeled samples per step"),
    field("batch_unlabeled", "B_U", "unlabeled samples per step"),
    field("hidden", "h", "encoder width"),
    field("projection", "p", "projection output dimension"),
    field("clusters", "K", "number of transport clusters"),
    field("lr", "lr", "base learning rate, cosine-annealed to 0"),
    field("momentum", "μ", "SGD momentum"),
    field("weight_decay", "wd", "SGD weight decay"),
    field("gamma", "γ", "weight of the uniformity loss L_unif"),
    field("lambda", "λ", "weight of the contrastive loss L_rep"),
    field("contrastive_temperature", "t_c", "InfoNCE temperature"),
    field("queue_batches", "n", "memory queue length in batches"),
    field("aug_jitter", "σ", "augmentation jitter, fraction of feature std"),
    field("aug_scale", "s", "augmentation scale spread, factor in [1-s, 1+s]"),
    field("epsilon", "ε", "entropic regularization of the transport"),
    field("sinkhorn_iters", "-", "Sinkhorn iteration budget per epoch"),
    field("sinkhorn_tol", "-", "Sinkhorn marginal L1 tolerance"),
    field("exponent", "-", "kernel exponent: inverse_epsilon (C^(1/ε)) or epsilon (C^ε)"),
    field("tau", "τ", "promotion threshold on the dominant class rate"),
    field("temperature", "T", "T-energy temperature for test scoring"),
    field("score_method", "-", "test score: msp, energy or tenergy"),
    field("assigner", "-", "assignment method: et, kmeans or none"),
    field("use_unlabeled", "D_U", "train on the unlabeled pool"),
    field("kmeans_iters", "-", "Lloyd iterations of the k-means assigner"),
    field("seed", "-", "random seed"),
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

/// Sets one field from its textual value.
pub fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let v = value.trim();
    match key {
        "epochs" => cfg.epochs = parse_value(key, v)?,
        "batch_labeled" => cfg.batch_labeled = parse_value(key, v)?,
        "batch_unlabeled" => cfg.batch_unlabeled = parse_value(key, v)?,
        "hidden" => cfg.hidden = parse_value(key, v)?,
        "projection" => cfg.projection = parse_value(key, v)?,
        "clusters" => cfg.clusters = parse_value(key, v)?,
        "lr" => cfg.lr = parse_value(key, v)?,
        "momentum" => cfg.momentum = parse_value(key, v)?,
        "weight_decay" => cfg.weight_decay = parse_value(key, v)?,
        "gamma" => cfg.gamma = parse_value(key, v)?,
        "lambda" => cfg.lambda = parse_value(key, v)?,
        "contrastive_temperature" => cfg.contrastive_temperature = parse_value(key, v)?,
        "queue_batches" => cfg.queue_batches = parse_value(key, v)?,
        "aug_jitter" => cfg.aug_jitter = parse_value(key, v)?,
        "aug_scale" => cfg.aug_scale = parse_value(key, v)?,
        "epsilon" => cfg.epsilon = parse_value(key, v)?,
        "sinkhorn_iters" => cfg.sinkhorn_iters = parse_value(key, v)?,
        "sinkhorn_tol" => cfg.sinkhorn_tol = parse_value(key, v)?,
        "exponent" => cfg.exponent = v.parse()?,
        "tau" => cfg.tau = parse_value(key, v)?,
        "temperature" => cfg.temperature = parse_value(key, v)?,
        "score_method" => cfg.score_method = v.parse()?,
        "assigner" => cfg.assigner = v.parse()?,
        "use_unlabeled" => cfg.use_unlabeled = parse_value(key, v)?,
        "kmeans_iters" => cfg.kmeans_iters = parse_value(key, v)?,
        "seed" => cfg.seed = parse_value(key, v)?,
        other => return Err(Error::invalid(format!("unknown configuration key {other:?}"))),
    }
    Ok(())
}

/// Textual value of one field, in a form [`set`] accepts.
pub fn get(cfg: &TrainConfig, key: &str) -> Option<String> {
    Some(match key {
        "epochs" => cfg.epochs.to_string(),
        "batch_labeled" => cfg.batch_labeled.to_string(),
        "batch_unlabeled" => cfg.batch_unlabeled.to_string(),
        "hidden" => cfg.hidden.to_string(),
        "projection" => cfg.projection.to_string(),
        "clusters" => cfg.clusters.to_string(),
        "lr" => cfg.lr.to_string(),
        "momentum" => cfg.momentum.to_string(),
        "weight_decay" => cfg.weight_decay.to_string(),
        "gamma" => cfg.gamma.to_string(),
        "lambda" => cfg.lambda.to_string(),
        "contrastive_temperature" => cfg.contrastive_temperature.to_string(),
        "queue_batches" => cfg.queue_batches.to_string(),
        "aug_jitter" => cfg.aug_jitter.to_string(),
        "aug_scale" => cfg.aug_scale.to_string(),
        "epsilon" => cfg.epsilon.to_string(),
        "sinkhorn_iters" => cfg.sinkhorn_iters.to_string(),
        "sinkhorn_tol" => cfg.sinkhorn_tol.to_string(),
        "exponent" => cfg.exponent.name().to_string(),
        "tau" => cfg.tau.to_string(),
        "temperature" => cfg.temperature.to_string(),
        "score_method" => cfg.score_method.name().to_string(),
        "assigner" => cfg.assigner.name().to_string(),
        "use_unlabeled" => cfg.use_unlabeled.to_string(),
        "kmeans_iters" => cfg.kmeans_iters.to_string(),
        "seed" => cfg.seed.to_string(),
        _ => return None,
    })
}

/// Applies every `key = value` line of `text` on top of `cfg`. Errors name
/// the 1-based line.
pub fn apply_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
        set(cfg, key.trim(), value)
            .map_err(|e| Error::invalid(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
    }
    Ok(())
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Invalid(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// Defaults overridden by the file at `path`.
pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = TrainConfig::default();
    apply_text(&mut cfg, &text).map_err(|e| Error::invalid(format!("{}: {}", path.display(), strip_prefix(&e))))?;
    Ok(cfg)
}

/// Every field as `key = value` lines, in [`FIELDS`] order.
pub fn render(cfg: &TrainConfig) -> String {
    FIELDS
        .iter()
        .map(|f| format!("{} = {}\n", f.key, get(cfg, f.key).expect("every field has a value")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::Assigner;
    use crate::scoring::ScoreMethod;

    #[test]
    fn render_round_trips() {
        let mut cfg = TrainConfig {
            epsilon: 0.07,
            tau: 0.9,
            assigner: Assigner::KMeans,
            score_method: ScoreMethod::Msp,
            use_unlabeled: false,
            seed: 17,
            ..TrainConfig::default()
        };
        cfg.lr = 0.1 + 0.2;
        let mut back = TrainConfig::default();
        apply_text(&mut back, &render(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_field_is_settable() {
        let cfg = TrainConfig::default();
        for f in FIELDS {
            let mut c = TrainConfig::default();
            set(&mut c, f.key, &get(&cfg, f.key).unwrap()).unwrap();
            assert_eq!(c, cfg, "{}", f.key);
        }
    }

    #[test]
    fn comments_blanks_and_spacing() {
        let mut cfg = TrainConfig::default();
        apply_text(&mut cfg, "# comment\n\n  epsilon=0.1 \nclusters = 32\n").unwrap();
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.clusters, 32);
    }

    #[test]
    fn errors_name_the_line() {
        let mut cfg = TrainConfig::default();
        let e = apply_text(&mut cfg, "tau = 0.8\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = apply_text(&mut cfg, "tau 0.8\n").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
        assert!(apply_text(&mut cfg, "epochs = -3\n").is_err());
        assert_eq!(e.exit_code(), 3);
    }
}
