mod common;

use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

use scood_ot::transport::{
    energy_scores, energy_transport, entropic_objective, harden, sinkhorn_solve, transport_marginals, EnergyVector,
    LogitMatrix, RowKind, SinkhornOptions, Stabilization, TransportProblem,
};

fn logit_matrix(max_k: usize, max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_k, 1..=max_n).prop_flat_map(|(k, n)| {
        prop::collection::vec(-5.0f64..5.0, k * n).prop_map(move |v| Array2::from_shape_vec((k, n), v).unwrap())
    })
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

fn opts(stabilization: Stabilization) -> SinkhornOptions {
    SinkhornOptions {
        max_iter: 5000,
        stabilization,
        ..SinkhornOptions::default()
    }
}

fn row_sums(q: &Array2<f64>) -> Array1<f64> {
    q.sum_axis(Axis(1))
}

fn col_sums(q: &Array2<f64>) -> Array1<f64> {
    q.sum_axis(Axis(0))
}

fn l1(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(f64::abs).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_solves_are_feasible(values in logit_matrix(64, 256), eps in 0.05f64..0.5) {
        let logits = LogitMatrix::new(values, RowKind::Cluster).unwrap();
        let (problem, _) = TransportProblem::from_logits(&logits, eps).unwrap();
        let q = sinkhorn_solve(&problem, &opts(Stabilization::Auto)).unwrap();
        prop_assert!(q.q.iter().all(|&v| v >= 0.0));
        // Equal up to summation order.
        prop_assert!((q.row_marginal_error - l1(&row_sums(&q.q), problem.alpha())).abs() <= 1e-14);
        prop_assert!((q.col_marginal_error - l1(&col_sums(&q.q), problem.beta())).abs() <= 1e-14);
        if q.converged {
            prop_assert!(q.row_marginal_error <= 1e-6 && q.col_marginal_error <= 1e-6);
        }
    }

    #[test]
    fn energy_shift_equivariance(values in logit_matrix(8, 16), c in -50.0f64..50.0, col in 0usize..16) {
        let n = values.ncols();
        let col = col % n;
        let base = energy_scores(&LogitMatrix::new(values.clone(), RowKind::Cluster).unwrap());
        let mut shifted = values;
        shifted.column_mut(col).mapv_inplace(|v| v + c);
        let moved = energy_scores(&LogitMatrix::new(shifted, RowKind::Cluster).unwrap());
        prop_assert!((moved.raw()[col] - base.raw()[col] - c).abs() <= 1e-10);
        for i in (0..n).filter(|&i| i != col) {
            prop_assert_eq!(moved.raw()[i], base.raw()[i]);
        }
    }

    #[test]
    fn shift_preserves_order_and_positivity(raw in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        let e = EnergyVector::from_raw(raw.clone()).unwrap();
        prop_assert!(e.shifted().iter().all(|&s| s > 0.0));
        prop_assert_eq!(argsort(e.shifted()), argsort(&raw));
    }

    #[test]
    fn energy_scaling_leaves_beta_and_assignment_unchanged(
        values in logit_matrix(6, 24),
        scale in 0.01f64..100.0,
    ) {
        let k = values.nrows();
        let logits = LogitMatrix::new(values, RowKind::Cluster).unwrap();
        let energy = energy_scores(&logits);
        let scaled = EnergyVector::new(
            energy.raw().to_vec(),
            energy.shifted().iter().map(|s| s * scale).collect(),
        ).unwrap();
        let (a0, b0) = transport_marginals(&energy, k).unwrap();
        let (a1, b1) = transport_marginals(&scaled, k).unwrap();
        prop_assert_eq!(a0, a1);
        prop_assert!(l1(&b0, &b1) <= 1e-12);

        let p = scood_ot::transport::cluster_probabilities(&logits);
        let solve = |e: &EnergyVector, beta: Array1<f64>| {
            let cost = scood_ot::transport::energy_cost(&p, e).unwrap().mapv(|c| c.max(f64::MIN_POSITIVE));
            let problem = TransportProblem::new(cost, Array1::from_elem(k, 1.0 / k as f64), beta, 0.25).unwrap();
            let o = SinkhornOptions { max_iter: 100_000, ..opts(Stabilization::LogDomain) };
            sinkhorn_solve(&problem, &o).unwrap()
        };
        let q0 = solve(&energy, b0);
        let q1 = solve(&scaled, b1);
        prop_assert!(q0.converged && q1.converged);
        let diff = (&q0.q - &q1.q).mapv(f64::abs).sum();
        prop_assert!(diff <= 1e-5, "coupling moved by {}", diff);
        // Hardening may only differ on columns whose top two entries are within the solve tolerance.
        for (i, (c0, c1)) in harden(&q0).into_iter().zip(harden(&q1)).enumerate() {
            if c0 != c1 {
                let col = q0.q.column(i);
                prop_assert!((col[c0] - col[c1]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn column_permutation_is_equivariant(values in logit_matrix(6, 20), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = values.ncols();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut common::rng(seed));
        let permuted = values.select(Axis(1), &perm);
        let o = SinkhornOptions { tol: 1e-10, max_iter: 20_000, ..SinkhornOptions::default() };
        let a = energy_transport(&LogitMatrix::new(values, RowKind::Cluster).unwrap(), 0.1, &o).unwrap();
        let b = energy_transport(&LogitMatrix::new(permuted, RowKind::Cluster).unwrap(), 0.1, &o).unwrap();
        prop_assume!(a.assignment.converged && b.assignment.converged);
        for (dst, &src) in perm.iter().enumerate() {
            prop_assert_eq!(b.energy.shifted()[dst], a.energy.shifted()[src]);
            for j in 0..a.assignment.q.nrows() {
                let (x, y) = (b.assignment.q[[j, dst]], a.assignment.q[[j, src]]);
                prop_assert!((x - y).abs() <= 1e-8, "Q[{}, {}]: {} vs {}", j, dst, x, y);
            }
            let col = a.assignment.q.column(src);
            let (cb, ca) = (b.clusters[dst], a.clusters[src]);
            prop_assert!(cb == ca || (col[cb] - col[ca]).abs() <= 1e-8);
        }
    }

    #[test]
    fn log_domain_matches_dense(values in logit_matrix(8, 32), eps in 0.01f64..1.0) {
        let logits = LogitMatrix::new(values, RowKind::Cluster).unwrap();
        let (problem, _) = TransportProblem::from_logits(&logits, eps).unwrap();
        let o = |s| SinkhornOptions { tol: 1e-12, max_iter: 50_000, stabilization: s, ..SinkhornOptions::default() };
        let dense = sinkhorn_solve(&problem, &o(Stabilization::Dense));
        let log = sinkhorn_solve(&problem, &o(Stabilization::LogDomain)).unwrap();
        if let Ok(dense) = dense {
            prop_assume!(dense.converged && log.converged);
            let diff = (&dense.q - &log.q).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            prop_assert!(diff <= 1e-8, "max entry difference {}", diff);
        }
    }
}

#[test]
fn tiny_instances_match_grid_search() {
    let mut rng = common::rng(11);
    for case in 0..12 {
        let n = 2 + case % 2;
        let eps = if case % 4 < 2 { 0.05 } else { 0.1 };
        let problem = common::random_problem(2, n, eps, &mut rng);
        let o = SinkhornOptions {
            tol: 1e-12,
            max_iter: 100_000,
            stabilization: Stabilization::LogDomain,
            ..SinkhornOptions::default()
        };
        let q = sinkhorn_solve(&problem, &o).unwrap();
        assert!(q.converged);
        let solver = entropic_objective(&q.q, problem.cost(), eps);
        let step = 1e-4;
        let grid = common::brute_force_objective(
            problem.cost(),
            problem.alpha().as_slice().unwrap(),
            problem.beta().as_slice().unwrap(),
            eps,
            step,
        );
        assert!(solver >= grid - 1e-9, "case {case}: solver {solver} below grid {grid}");
        assert!(solver - grid <= 1e-4, "case {case}: solver {solver} vs grid {grid}");
    }
}
