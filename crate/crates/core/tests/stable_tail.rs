mod common;

use hotspots::branching::{phi_eval, stable_tail_constant, BranchingMechanism, JumpMeasure};

#[test]
fn closed_form_matches_quadrature() {
    for beta in [0.25, 0.5, 0.75] {
        let c1 = stable_tail_constant(beta).unwrap();
        let mech = BranchingMechanism::new(0.0, 0.0, JumpMeasure::StableTail { c1, beta }).unwrap();
        for lambda in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let quad = common::stable_tail_quadrature(c1, beta, lambda);
            let closed = phi_eval(&mech, lambda).unwrap();
            assert!((quad - closed).abs() < 1e-8 * closed.abs().max(1.0), "beta {beta} lambda {lambda}: {quad} vs {closed}");
        }
    }
}

#[test]
fn constant_at_one_half() {
    let c1 = stable_tail_constant(0.5).unwrap();
    assert!((c1 - 0.42314).abs() < 5e-6, "{c1}");
    let mech = BranchingMechanism::stable(0.5).unwrap();
    assert!((phi_eval(&mech, 1.0).unwrap() + 1.0).abs() < 1e-6);
    assert!((phi_eval(&mech, 2.0).unwrap() + 2f64.powf(1.5)).abs() < 1e-6);
    assert!((common::stable_tail_quadrature(c1, 0.5, 2.0) + 2f64.powf(1.5)).abs() < 1e-6);
}

#[test]
fn quadrature_small_beta_is_finite() {
    // sanity check of the oracle away from the tested betas
    let q = common::stable_tail_quadrature(1.0, 0.1, 1.0);
    assert!(q < 0.0 && q.is_finite());
}
