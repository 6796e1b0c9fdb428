mod common;

use common::{estimator_consistency, integrate, null_model, simpson};

#[test]
fn quadrature_matches_closed_forms() {
    let exact = 1.0 - (-2.0_f64).exp();
    assert!((simpson(|u| (-u).exp(), 0.0, 2.0, 50) - exact).abs() < 1e-8);
    // Kinked integrand: int_0^3 max(0, 1 - u) du = 1/2.
    let kinked = integrate(|u| (1.0 - u).max(0.0), 0.0, 3.0, &[1.0]);
    assert!((kinked - 0.5).abs() < 1e-12);
    assert_eq!(null_model::followup(2.5, 3.0), 0.25);
    assert_eq!(null_model::followup(0.5, 3.0), 1.0);
}

#[test]
fn estimators_track_their_asymptotic_targets() {
    let seeds: Vec<u64> = (0..8).map(|s| 9_000 + s).collect();
    for c in estimator_consistency(8_000, &seeds) {
        assert!(
            c.passes(),
            "{}: mean {:.6} truth {:.6} se {:.6}",
            c.name,
            c.mean,
            c.truth,
            c.se
        );
    }
}

