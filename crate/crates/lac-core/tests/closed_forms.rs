//! Closed-form actions and clairvoyant costs against the dense-QP oracle.

mod common;

use common::{normal, random_lqc, uniform};
use lac_core::lqc;
use lac_core::oracles;
use lac_core::DVector;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

#[test]
fn receding_action_matches_dense_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..60 {
        let n = 1 + (trial % 4);
        let m = 1 + (trial % 3).min(n - 1).max(0);
        let k = 1 + (trial % 6);
        let gains = random_lqc(&mut rng, n, m, 50);
        let x0 = DVector::from_fn(n, |_, _| normal(&mut rng));
        let params: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(n, |_, _| normal(&mut rng)))
            .collect();
        let closed = lqc::receding_action(&gains, &x0, &params);
        let qp = oracles::dense_receding_qp(
            &gains.a, &gains.b, &gains.q, &gains.r, &gains.p, &x0, &params,
        );
        let diff = (&closed - &qp[0]).norm();
        assert!(
            diff <= 1e-8 * (1.0 + closed.norm()),
            "trial {trial}: closed-form vs QP diff {diff}"
        );
    }
}

#[test]
fn clairvoyant_cost_matches_full_horizon_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..10 {
        let n = 2 + (trial % 3);
        let m = 1 + (trial % 2);
        let horizon = 20;
        let gains = random_lqc(&mut rng, n, m, horizon);
        let x0 = DVector::from_fn(n, |_, _| normal(&mut rng));
        let truth: Vec<DVector<f64>> = (0..horizon)
            .map(|_| DVector::from_fn(n, |_, _| 0.5 * normal(&mut rng)))
            .collect();
        let sol = lqc::clairvoyant_optimal(&gains, &x0, &truth);
        let qp = oracles::kkt_full_horizon(
            &gains.a, &gains.b, &gains.q, &gains.r, &gains.p, &x0, &truth,
        );
        let qp_cost = oracles::dense_objective(
            &gains.a, &gains.b, &gains.q, &gains.r, &gains.p, &x0, &truth, &qp,
        );
        assert!(
            (sol.cost - qp_cost).abs() <= 1e-8 * (1.0 + qp_cost.abs()),
            "trial {trial}: clairvoyant {} vs QP {}",
            sol.cost,
            qp_cost
        );
        // Per-action agreement too.
        for (u, v) in sol.actions.iter().zip(&qp) {
            assert!((u - v).norm() <= 1e-7 * (1.0 + u.norm()));
        }
    }
}

#[test]
fn lqc_sensitivity_respects_closed_form_edpb() {
    // Perturbing the parameter at offset j moves the action by at most
    // C_F ||M|| ||P|| rho_F^j times the perturbation.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let gains = random_lqc(&mut rng, 3, 2, 50);
        let bound_const = gains.c_f
            * lqc::operator_norm(&gains.m)
            * lqc::operator_norm(&gains.p);
        let k = 6;
        let x = DVector::from_fn(3, |_, _| normal(&mut rng));
        let params: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(3, |_, _| normal(&mut rng)))
            .collect();
        let u = lqc::receding_action(&gains, &x, &params);
        for j in 0..k {
            let mut perturbed = params.clone();
            let delta = DVector::from_fn(3, |_, _| 0.3 * normal(&mut rng));
            perturbed[j] += &delta;
            let uj = lqc::receding_action(&gains, &x, &perturbed);
            let lhs = (&uj - &u).norm();
            let rhs = bound_const * gains.rho_f.powi(j as i32) * delta.norm();
            assert!(lhs <= rhs + 1e-12, "offset {j}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn random_unconstrained_identity_holds_with_random_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    for trial in 0..25 {
        let horizon = 30;
        let k = 5;
        let n = 2 + (trial % 3);
        let m = 1 + (trial % 2);
        let gains = random_lqc(&mut rng, n, m, horizon);
        let truth: Vec<DVector<f64>> = (0..horizon)
            .map(|_| DVector::from_fn(n, |_, _| 0.4 * normal(&mut rng)))
            .collect();
        let preds: Vec<Vec<DVector<f64>>> = (0..horizon)
            .map(|t| {
                let end = usize::min(t + k - 1, horizon - 1);
                (t..=end)
                    .map(|tau| &truth[tau] + DVector::from_fn(n, |_, _| 0.3 * normal(&mut rng)))
                    .collect()
            })
            .collect();
        let lambda = uniform(&mut rng);
        let x0 = DVector::from_fn(n, |_, _| normal(&mut rng));
        let id = lqc::regret_identity_check(&gains, lambda, &preds, &truth, &x0);
        assert!(
            id.relative_residual <= 1e-6,
            "trial {trial}: residual {}",
            id.relative_residual
        );
    }
}
