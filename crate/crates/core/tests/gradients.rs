mod common;

use common::{gradient_check, LossTerm};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn check(term: LossTerm) {
    for seed in 0..20 {
        let err = gradient_check(seed, term, STEP);
        assert!(err <= TOL, "{term:?} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn classification_gradient_matches_finite_differences() {
    check(LossTerm::Cls);
}

#[test]
fn uniformity_gradient_matches_finite_differences() {
    check(LossTerm::Unif);
}

#[test]
fn infonce_gradient_matches_finite_differences() {
    check(LossTerm::InfoNce);
}
