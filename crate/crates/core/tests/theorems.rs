//! Exact-enumeration checks of the disparity decomposition, the
//! accepted-only blind spot, certificate soundness and the importance
//! weights, each with its runtime budget.

mod common;

use std::time::{Duration, Instant};

use ltfair_core::metrics::Certificate;
use ltfair_core::oracle::{
    check_accepted_only, check_decomposition, check_soundness, check_weights, InstanceShape,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn timed<T>(budget: Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    assert!(took < budget, "took {took:?}, budget {budget:?}");
    out
}

#[test]
fn decomposition_identity_holds_on_random_instances() {
    let res = timed(Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        check_decomposition(&mut rng, 100, InstanceShape::default()).unwrap()
    });
    assert!(res.passed(), "{res:?}");
    assert_eq!(res.checked, 300);
    assert!(res.max_error <= 1e-12);
}

#[test]
fn decomposition_with_three_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let shape = InstanceShape {
        groups: 3,
        ..InstanceShape::default()
    };
    let res = check_decomposition(&mut rng, 100, shape).unwrap();
    assert!(res.passed(), "{res:?}");
}

#[test]
fn accepted_only_disparity_is_blind() {
    let res = timed(Duration::from_secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        check_accepted_only(&mut rng, 100).unwrap()
    });
    assert!(res.passed(), "{res:?}");
}

#[test]
fn certificates_are_sound() {
    let results = timed(Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        [Certificate::TrueError, Certificate::Bound]
            .map(|mode| check_soundness(&mut rng, 100, mode, InstanceShape::default()).unwrap())
    });
    for res in results {
        assert!(res.passed(), "{res:?}");
        assert!(res.max_error <= 1.0 + 1e-12);
    }
}

#[test]
fn importance_weights_are_exact_and_monte_carlo_consistent() {
    timed(Duration::from_secs(60), || {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        let res = check_weights(&mut rng, 100).unwrap();
        assert!(res.passed(), "{res:?}");
        let mc = common::ipw_monte_carlo(30, 100_000, 106);
        assert_eq!(mc.groups_checked, 60);
        assert_eq!(mc.within_3se, mc.groups_checked, "{mc:?}");
    });
}
