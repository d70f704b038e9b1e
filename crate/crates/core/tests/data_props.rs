mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;

use scood_ot::assignment::HiddenTruth;
use scood_ot::data::{
    generate_scood_toy, load_dataset, load_matrix, save_dataset, save_matrix, OodShape, ToyScoodConfig,
};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Two-sample energy distance with pooled pairwise distances `d` and group
/// membership `in_x`.
fn energy_statistic(d: &Array2<f64>, in_x: &[bool]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    let n = in_x.len();
    for i in 0..n {
        for j in 0..n {
            match (in_x[i], in_x[j]) {
                (true, true) => xx += d[[i, j]],
                (false, false) => yy += d[[i, j]],
                _ => xy += d[[i, j]],
            }
        }
    }
    let nx = in_x.iter().filter(|&&b| b).count() as f64;
    let ny = n as f64 - nx;
    // xy counts each cross pair twice.
    xy / (nx * ny) - xx / (nx * nx) - yy / (ny * ny)
}

/// Returns the observed statistic and the 95th percentile of its permutation
/// distribution.
fn permutation_test(x: &[Vec<f64>], y: &[Vec<f64>], permutations: usize, seed: u64) -> (f64, f64) {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let n = pooled.len();
    let d = Array2::from_shape_fn((n, n), |(i, j)| dist(pooled[i], pooled[j]));
    let mut labels: Vec<bool> = (0..n).map(|i| i < x.len()).collect();
    let observed = energy_statistic(&d, &labels);
    let mut rng = common::rng(seed);
    let mut null: Vec<f64> = (0..permutations)
        .map(|_| {
            labels.shuffle(&mut rng);
            energy_statistic(&d, &labels)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let q95 = null[(0.95 * permutations as f64).ceil() as usize - 1];
    (observed, q95)
}

fn split(cfg: &ToyScoodConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let data = generate_scood_toy(cfg).unwrap();
    let labeled = data.state.base_labeled().iter().map(|s| s.features.clone()).collect();
    let unlabeled_id = data
        .state
        .unlabeled()
        .iter()
        .filter(|s| matches!(s.hidden_truth(), HiddenTruth::Id(_)))
        .map(|s| s.features.clone())
        .collect();
    (labeled, unlabeled_id)
}

fn sized(seed: u64, offset: f64, inflation: f64) -> ToyScoodConfig {
    ToyScoodConfig {
        labeled_per_class: 50,
        unlabeled_id: 200,
        unlabeled_ood: 50,
        shift_offset: offset,
        variance_inflation: inflation,
        seed,
        ..ToyScoodConfig::default()
    }
}

#[test]
fn unshifted_unlabeled_id_matches_labeled_distribution() {
    for seed in 0..3 {
        let (x, y) = split(&sized(seed, 0.0, 1.0));
        let (stat, q95) = permutation_test(&x, &y, 199, 100 + seed);
        assert!(stat < q95, "seed {seed}: statistic {stat} not below {q95}");
    }
}

#[test]
fn default_shift_is_detected() {
    for seed in 0..3 {
        let (x, y) = split(&ToyScoodConfig::preset("toy", seed).unwrap());
        let (stat, q95) = permutation_test(&x, &y, 199, 200 + seed);
        assert!(stat > q95, "seed {seed}: statistic {stat} not above {q95}");
    }
}

#[test]
fn generated_directories_are_byte_identical() {
    let cfg = ToyScoodConfig::preset("toy", 5).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(a.path(), &generate_scood_toy(&cfg).unwrap(), &cfg).unwrap();
    save_dataset(b.path(), &generate_scood_toy(&cfg).unwrap(), &cfg).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for name in names {
        let fa = std::fs::read(a.path().join(&name)).unwrap();
        let fb = std::fs::read(b.path().join(&name)).unwrap();
        assert_eq!(fa, fb, "{name:?} differs");
    }
}

fn small_config() -> impl Strategy<Value = ToyScoodConfig> {
    (
        2usize..5,
        2usize..4,
        0usize..20,
        0usize..40,
        0usize..40,
        0usize..30,
        0usize..30,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(classes, dim, per_class, uid, uood, tid, tood, boxed, seed)| ToyScoodConfig {
            classes,
            dim,
            labeled_per_class: per_class,
            unlabeled_id: uid,
            unlabeled_ood: uood,
            test_id: tid,
            test_ood: tood,
            ood_shape: if boxed { OodShape::Box } else { OodShape::Annulus },
            ood_radius: if boxed { 14.0 } else { 9.5 },
            seed,
            ..ToyScoodConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn emitted_sizes_equal_config(cfg in small_config()) {
        let data = generate_scood_toy(&cfg).unwrap();
        let s = &data.state;
        prop_assert_eq!(s.base_labeled().len(), cfg.classes * cfg.labeled_per_class);
        for c in 0..cfg.classes {
            prop_assert_eq!(s.base_labeled().iter().filter(|x| x.label == c).count(), cfg.labeled_per_class);
        }
        let id = s.unlabeled().iter().filter(|x| matches!(x.hidden_truth(), HiddenTruth::Id(_))).count();
        prop_assert_eq!(id, cfg.unlabeled_id);
        prop_assert_eq!(s.unlabeled().len() - id, cfg.unlabeled_ood);
        prop_assert_eq!(data.test.id_features.dim(), (cfg.test_id, cfg.dim));
        prop_assert_eq!(data.test.id_labels.len(), cfg.test_id);
        prop_assert_eq!(data.test.ood_features.dim(), (cfg.test_ood, cfg.dim));
        prop_assert!(s.promotions().is_empty());
    }

    #[test]
    fn save_load_preserves_everything(cfg in small_config()) {
        let data = generate_scood_toy(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data, &cfg).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.state.base_labeled(), data.state.base_labeled());
        prop_assert_eq!(back.state.unlabeled(), data.state.unlabeled());
        for (a, b) in back.state.unlabeled().iter().zip(data.state.unlabeled()) {
            prop_assert_eq!(a.hidden_truth(), b.hidden_truth());
        }
        prop_assert_eq!(back.test, data.test);
    }

    #[test]
    fn matrices_round_trip_bitwise(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let m = common::normal_matrix(rows, cols, 1e3, &mut common::rng(seed)).mapv(|v| v / 7.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        save_matrix(&path, &m).unwrap();
        let back = load_matrix(&path).unwrap();
        prop_assert_eq!(back.dim(), m.dim());
        for (a, b) in back.iter().zip(&m) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
