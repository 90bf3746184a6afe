//! Closed-loop simulation: prediction-error injection, the run loop (state
//! always advances with the true parameters), the offline optimum, and the
//! competitive-ratio / bound report assembled per run.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::confidence::{self, SurrogateLoss};
use crate::lqc::{self, LqcGains};
use crate::model::{window_end, PredictionBundle, SystemModel, UncertaintySet};
use crate::noise;
use crate::policies::{Policy, PolicyError};
use crate::trajopt::{self, MpcProblem, SolveOptions};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("initial state outside the state box (violation {0:.3e})")]
    StartOutsideStateBox(f64),
    #[error("nonlinear offline optimum capped at T = {cap}, scenario has T = {horizon}")]
    HorizonCap { cap: usize, horizon: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Solver(#[from] trajopt::TrajoptError),
}

/// How the uncertainty-set diameter is resolved at ingestion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaPolicy {
    /// Twice the max norm over truth and raw predictions (projection is a no-op).
    FromData,
    /// Twice the max truth norm; out-of-scale predictions get clipped.
    FromTruth,
    /// Fixed diameter.
    Fixed(f64),
}

/// Prediction-error schedule for a scenario.
#[derive(Clone, Debug)]
pub enum ErrorSchedule {
    /// Predictions equal the truth.
    None,
    /// Every window gets a noise vector rescaled to the target stacked norm.
    Graded { target: f64, sigma: f64, mean_ones: bool },
    /// Perfect predictions except inside `[start, end)` at steps with
    /// `t % modulus` in `residues`, where the window error has the given norm.
    Attack {
        start: usize,
        end: usize,
        modulus: usize,
        residues: Vec<usize>,
        norm: f64,
        sigma: f64,
        mean_ones: bool,
    },
}

impl ErrorSchedule {
    /// Error norm injected into the window issued at step `t` (0 = clean).
    pub fn target_at(&self, t: usize) -> f64 {
        match self {
            ErrorSchedule::None => 0.0,
            ErrorSchedule::Graded { target, .. } => *target,
            ErrorSchedule::Attack {
                start,
                end,
                modulus,
                residues,
                norm,
                ..
            } => {
                if t >= *start && t < *end && residues.contains(&(t % modulus)) {
                    *norm
                } else {
                    0.0
                }
            }
        }
    }

    fn noise_params(&self) -> (f64, bool) {
        match self {
            ErrorSchedule::None => (0.5, true),
            ErrorSchedule::Graded { sigma, mean_ones, .. } => (*sigma, *mean_ones),
            ErrorSchedule::Attack { sigma, mean_ones, .. } => (*sigma, *mean_ones),
        }
    }
}

/// Build the prediction bundle for a truth stream: per window, draw stacked
/// noise (entries `1 + sigma N(0,1)`, or zero-mean when configured), rescale
/// it to the scheduled norm, add it to the truth, resolve the uncertainty
/// set per the gamma policy, and project everything into it.
///
/// Nominals are zero. Fresh noise is drawn for every scheduled window.
pub fn inject_errors(
    truth: &[DVector<f64>],
    window: usize,
    schedule: &ErrorSchedule,
    gamma_policy: GammaPolicy,
    rng: &mut ChaCha8Rng,
) -> (PredictionBundle, UncertaintySet) {
    let horizon = truth.len();
    let dim = truth[0].len();
    let (sigma, mean_ones) = schedule.noise_params();

    let mut predictions: Vec<Vec<DVector<f64>>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let end = window_end(t, window, horizon);
        let len = end - t + 1;
        let target = schedule.target_at(t);
        let mut win: Vec<DVector<f64>> = truth[t..=end].to_vec();
        if target > 0.0 {
            let stacked = len * dim;
            let mut noise_vec = alloc::vec![0.0; stacked];
            loop {
                noise::fill_standard_normal(rng, &mut noise_vec);
                for v in noise_vec.iter_mut() {
                    *v = if mean_ones { 1.0 + sigma * *v } else { sigma * *v };
                }
                let norm = crate::math::sqrt(noise_vec.iter().map(|v| v * v).sum::<f64>());
                if norm > 1e-12 {
                    let scale = target / norm;
                    for (i, entry) in noise_vec.iter().enumerate() {
                        win[i / dim][i % dim] += entry * scale;
                    }
                    break;
                }
            }
        }
        predictions.push(win);
    }
    let nominals: Vec<Vec<DVector<f64>>> = predictions
        .iter()
        .map(|w| w.iter().map(|v| DVector::zeros(v.len())).collect())
        .collect();

    let mut bundle =
        PredictionBundle::new(truth.to_vec(), predictions, nominals, window).expect("shapes");
    let gamma = match gamma_policy {
        GammaPolicy::FromData => 2.0 * bundle.max_norm(),
        GammaPolicy::FromTruth => 2.0 * bundle.max_truth_norm(),
        GammaPolicy::Fixed(g) => g,
    };
    let set = UncertaintySet::Ball {
        radius: f64::max(gamma, 1e-9) / 2.0,
    };
    bundle.project_into(&set);
    (bundle, set)
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: usize,
    pub state: DVector<f64>,
    pub action: DVector<f64>,
    pub cost: f64,
    pub lambda: f64,
    pub feasible: bool,
    pub violation: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryLog {
    pub steps: Vec<StepRecord>,
    pub terminal_state: DVector<f64>,
    pub terminal_cost: f64,
    /// `J`: stage costs plus terminal cost, accumulated with true parameters.
    pub total_cost: f64,
    pub infeasible_steps: usize,
    pub nonconverged_solves: usize,
}

impl TrajectoryLog {
    /// Re-derive `J` from the logged actions by replaying the dynamics.
    pub fn recompute_cost(&self, system: &SystemModel, truth: &[DVector<f64>]) -> f64 {
        let mut x = self.steps[0].state.clone();
        let mut j = 0.0;
        for (rec, phi) in self.steps.iter().zip(truth) {
            j += system.stage_cost(&x, &rec.action);
            x = system.step(&x, &rec.action, phi);
        }
        j + system.terminal_cost(&x)
    }
}

/// Run one closed loop. The policy sees only its step view; the state
/// always advances with the true parameter table of the bundle. Infeasible
/// executed tuples are flagged and the run continues.
pub fn run_closed_loop(
    system: &SystemModel,
    policy: &mut Policy,
    bundle: &PredictionBundle,
    x0: &DVector<f64>,
) -> Result<TrajectoryLog, SimError> {
    if let Some(b) = &system.state_box {
        let v = b.violation(x0);
        if v > trajopt::FEASIBILITY_TOL {
            return Err(SimError::StartOutsideStateBox(v));
        }
    }
    let horizon = bundle.horizon();
    let mut steps = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    let mut total = 0.0;
    let mut infeasible = 0;
    for t in 0..horizon {
        let view = bundle.step_view(t);
        let u = policy.action(system, &x, &view)?;
        let feas = trajopt::feasibility_check(system, &x, &u, &bundle.truth[t]);
        if !feas.pass {
            infeasible += 1;
        }
        let cost = system.stage_cost(&x, &u);
        total += cost;
        steps.push(StepRecord {
            t,
            state: x,
            action: u,
            cost,
            lambda: policy.lambda_log[t],
            feasible: feas.pass,
            violation: feas.worst_violation,
        });
        x = feas.next_state;
    }
    let terminal_cost = system.terminal_cost(&x);
    total += terminal_cost;
    Ok(TrajectoryLog {
        steps,
        terminal_state: x,
        terminal_cost,
        total_cost: total,
        infeasible_steps: infeasible,
        nonconverged_solves: policy.nonconverged_solves,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OfflineKind {
    ClosedForm,
    FullHorizonSolve,
    /// State-grid dynamic programming (1-D constrained plants), refined by
    /// a shooting polish.
    DynamicProgramming,
}

#[derive(Clone, Debug)]
pub struct OfflineOptimum {
    pub cost: f64,
    pub kind: OfflineKind,
    pub converged: bool,
    pub pg_residual: f64,
}

/// Clairvoyant optimal cost `J*`: the explicit formula on unconstrained
/// linear plants, otherwise a full-horizon shooting solve with the true
/// parameters (capped for nonlinear plants).
pub fn offline_optimum(
    system: &SystemModel,
    gains: Option<&LqcGains>,
    truth: &[DVector<f64>],
    x0: &DVector<f64>,
    nonlinear_cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<OfflineOptimum, SimError> {
    if let Some(g) = gains {
        if system.state_box.is_none() {
            let sol = lqc::clairvoyant_optimal(g, x0, truth);
            let box_inactive = match &system.input_box {
                None => true,
                // If the unconstrained optimum already satisfies the box,
                // it is the constrained optimum (zero multipliers).
                Some(b) => sol.actions.iter().all(|u| b.violation(u) <= 0.0),
            };
            if box_inactive {
                return Ok(OfflineOptimum {
                    cost: sol.cost,
                    kind: OfflineKind::ClosedForm,
                    converged: true,
                    pg_residual: 0.0,
                });
            }
        }
    }
    let linear = gains.is_some();
    if !linear && truth.len() > nonlinear_cap {
        return Err(SimError::HorizonCap {
            cap: nonlinear_cap,
            horizon: truth.len(),
        });
    }
    if !linear && system.state_dim == 1 && system.state_box.is_some() {
        return dp_optimum_1d(system, truth, x0, rng);
    }
    let options = SolveOptions {
        max_iters: 20_000,
        multi_start: !linear,
        ..SolveOptions::default()
    };
    let problem = MpcProblem {
        system,
        x0: x0.clone(),
        params: truth.to_vec(),
        warm_start: None,
        options,
    };
    let sol = trajopt::solve_mpc(&problem, rng)?;
    Ok(OfflineOptimum {
        cost: sol.objective,
        kind: OfflineKind::FullHorizonSolve,
        converged: sol.converged,
        pg_residual: sol.pg_residual,
    })
}

/// Offline optimum for 1-D constrained plants by backward value iteration
/// over a state grid. The transition is inverted per grid target (the
/// input reaching each next grid point has a closed form), so no
/// interpolation error enters the recursion, and the optimum is read off
/// the value function: open-loop replay of a 200-step plan on an unstable
/// plant amplifies rounding past any tolerance, so no rollout is used.
/// Convergence is certified by agreement under grid refinement.
fn dp_optimum_1d(
    system: &SystemModel,
    truth: &[DVector<f64>],
    x0: &DVector<f64>,
    _rng: &mut ChaCha8Rng,
) -> Result<OfflineOptimum, SimError> {
    let coarse = dp_value_1d(system, truth, x0, 401);
    let fine = dp_value_1d(system, truth, x0, 801);
    let converged = (coarse - fine).abs() <= 1e-3 * (1.0 + fine.abs());
    Ok(OfflineOptimum {
        cost: fine,
        kind: OfflineKind::DynamicProgramming,
        converged,
        pg_residual: (coarse - fine).abs(),
    })
}

fn dp_value_1d(
    system: &SystemModel,
    truth: &[DVector<f64>],
    x0: &DVector<f64>,
    grid: usize,
) -> f64 {
    let horizon = truth.len();
    let bounds = system.state_box.as_ref().expect("1-D DP needs a state box");
    let (lo, hi) = (bounds.lower[0], bounds.upper[0]);
    let xs: Vec<f64> = (0..grid)
        .map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64)
        .collect();
    let (u_lo, u_hi) = match &system.input_box {
        Some(b) => (b.lower[0], b.upper[0]),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let r_weight = system.r[(0, 0)];

    let mut value: Vec<f64> = xs
        .iter()
        .map(|&x| system.terminal_cost(&DVector::from_element(1, x)))
        .collect();
    let zero_u = DVector::zeros(1);
    for t in (0..horizon).rev() {
        let phi = &truth[t];
        let mut next_value = alloc::vec![f64::INFINITY; grid];
        for (i, &x) in xs.iter().enumerate() {
            let xv = DVector::from_element(1, x);
            let drift = system.step(&xv, &zero_u, phi)[0];
            let (_, fu) = system.dynamics_jacobians(&xv, &zero_u);
            let gain = fu[(0, 0)];
            if gain.abs() < 1e-12 {
                continue;
            }
            let stage_x = system.stage_cost(&xv, &zero_u);
            let mut best = f64::INFINITY;
            for (j, &target) in xs.iter().enumerate() {
                let u = (target - drift) / gain;
                if u < u_lo || u > u_hi {
                    continue;
                }
                let c = stage_x + r_weight * u * u + value[j];
                if c < best {
                    best = c;
                }
            }
            next_value[i] = best;
        }
        value = next_value;
    }

    // Interpolate the start value (x0 may sit between grid points).
    let pos = ((x0[0] - lo) / (hi - lo) * (grid - 1) as f64).clamp(0.0, (grid - 1) as f64);
    let i0 = pos.floor() as usize;
    let frac = pos - i0 as f64;
    if i0 + 1 < grid {
        value[i0] * (1.0 - frac) + value[i0 + 1] * frac
    } else {
        value[i0]
    }
}

/// One metrics row. `cr = None` encodes the `J* = 0` convention (infinite).
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub j: f64,
    pub j_star: f64,
    pub cr: Option<f64>,
    pub varpi_rho: f64,
    pub varpi_gram: f64,
    pub gram_degenerate: bool,
    /// LQC competitive upper bound for the learned policy.
    pub upper_bound: Option<f64>,
    /// LQC competitive lower bound holding for any policy.
    pub lower_bound: Option<f64>,
    pub dcl_regret: Option<f64>,
    pub lemma_bound: Option<f64>,
    pub adversity: usize,
    pub infeasible_steps: usize,
}

/// Per-step losses for a bundle under the given decay weights.
pub fn bundle_losses(bundle: &PredictionBundle, weights: &[f64]) -> Vec<SurrogateLoss> {
    confidence::build_losses(&bundle.truth, &bundle.predictions, &bundle.nominals, weights)
}

/// Stack prediction errors and windowed truth for the Gram-determinant
/// varpi (both in window-major order).
pub fn stacked_error_and_truth(bundle: &PredictionBundle) -> (DVector<f64>, DVector<f64>) {
    let horizon = bundle.horizon();
    let mut err_windows = Vec::with_capacity(horizon);
    let mut truth_windows = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let window = &bundle.predictions[t];
        let mut errs = Vec::with_capacity(window.len());
        let mut truths = Vec::with_capacity(window.len());
        for (j, pred) in window.iter().enumerate() {
            errs.push(&bundle.truth[t + j] - pred);
            truths.push(bundle.truth[t + j].clone());
        }
        err_windows.push(errs);
        truth_windows.push(truths);
    }
    (
        confidence::stack_windows(&err_windows),
        confidence::stack_windows(&truth_windows),
    )
}

/// Assemble the per-run metrics: competitive ratio, both varpi forms, the
/// LQC bound values, and (for learned runs) the DCL regret against its
/// sublinearity bound.
#[allow(clippy::too_many_arguments)]
pub fn competitive_report(
    gains: Option<&LqcGains>,
    bundle: &PredictionBundle,
    log: &TrajectoryLog,
    lambda_history: Option<&[f64]>,
    weights: &[f64],
    gamma: f64,
    delay: usize,
    j_star: f64,
) -> MetricsRecord {
    let losses = bundle_losses(bundle, weights);
    let varpi_rho = confidence::varpi_rho(&losses);
    let (eps_stack, truth_stack) = stacked_error_and_truth(bundle);
    let (varpi_gram, gram_degenerate) = confidence::varpi_gram(&eps_stack, &truth_stack);

    let cr = if j_star > 0.0 {
        Some(log.total_cost / j_star)
    } else {
        None
    };

    let horizon = bundle.horizon() as f64;
    let k = delay as f64;
    let (upper_bound, lower_bound) = match gains {
        None => (None, None),
        Some(g) => {
            let h_norm = lqc::operator_norm(&g.h);
            let p_norm = lqc::operator_norm(&g.p);
            let rho2k = crate::math::powi(g.rho_f, 2 * delay);
            let upper = cr.map(|_| {
                1.0 + (2.0 * g.c_f * g.c_f * h_norm * p_norm * p_norm
                    / ((1.0 - g.rho_f) * (1.0 - g.rho_f)))
                    * (gamma * gamma * rho2k * horizon
                        + 4.0 * gamma * gamma
                            * crate::math::sqrt(
                                horizon * crate::math::powi(k, 3) + crate::math::powi(k, 4),
                            )
                        + varpi_gram)
                    / j_star
            });
            let sb = lqc::min_singular(&g.b);
            let sp = lqc::min_singular(&g.p);
            let (_, lam_s_max) = lqc::sym_eig_range(&g.s);
            let lower = cr.map(|_| 1.0 + sb * sb * sp * sp / lam_s_max * varpi_gram / j_star);
            (upper, lower)
        }
    };

    let (dcl_regret, lemma_bound) = match lambda_history {
        None => (None, None),
        Some(lh) => {
            let c: f64 = weights.iter().take(delay).sum();
            let rep = confidence::dcl_regret(&losses, lh, c, gamma, delay);
            (Some(rep.regret), Some(rep.bound))
        }
    };

    MetricsRecord {
        j: log.total_cost,
        j_star,
        cr,
        varpi_rho,
        varpi_gram,
        gram_degenerate,
        upper_bound,
        lower_bound,
        dcl_regret,
        lemma_bound,
        adversity: lqc::adversity(&bundle.truth),
        infeasible_steps: log.infeasible_steps,
    }
}

/// Per-step action/state error diagnostics against the clairvoyant policy,
/// evaluated at the realized states (unconstrained linear plants only).
pub fn per_step_error_diag(
    gains: &LqcGains,
    log: &TrajectoryLog,
    combined: &[Vec<DVector<f64>>],
    truth: &[DVector<f64>],
) -> Vec<(f64, f64)> {
    let tails = lqc::clairvoyant_tail_sums(gains, truth);
    let mut out = Vec::with_capacity(log.steps.len());
    for rec in &log.steps {
        let t = rec.t;
        let u_lam = lqc::receding_action(gains, &rec.state, &combined[t]);
        let u_star = -(&gains.k * &rec.state) - &gains.m * &tails[t];
        let e_u = (&u_lam - &u_star).norm();
        let plan_next = &gains.a * &rec.state + &gains.b * &u_lam + &combined[t][0];
        let star_next = &gains.a * &rec.state + &gains.b * &u_star + &truth[t];
        let e_x = (plan_next - star_next).norm();
        out.push((e_u, e_x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_lqc_tracking_system;
    use crate::policies::{ControlLaw, Policy};
    use approx::assert_abs_diff_eq;

    fn rng() -> ChaCha8Rng {
        noise::substream(99, "sim-tests", 0)
    }

    #[test]
    fn graded_injection_hits_target_norm() {
        let sys = make_lqc_tracking_system(0.2, None, 40).unwrap();
        for target in [0.0, 0.7, 2.5, 5.0] {
            let schedule = ErrorSchedule::Graded {
                target,
                sigma: 0.5,
                mean_ones: true,
            };
            let mut r = rng();
            let (bundle, _) = inject_errors(&sys.truth, 5, &schedule, GammaPolicy::FromData, &mut r);
            for t in 0..bundle.horizon() {
                let mut stacked = 0.0;
                for (j, pred) in bundle.predictions[t].iter().enumerate() {
                    stacked += (pred - &sys.truth[t + j]).norm_squared();
                }
                let norm = stacked.sqrt();
                assert_abs_diff_eq!(norm, target, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn attack_schedule_triggers_where_specified() {
        let sys = make_lqc_tracking_system(1.0, None, 200).unwrap();
        let schedule = ErrorSchedule::Attack {
            start: 67,
            end: 133,
            modulus: 5,
            residues: alloc::vec![0, 1],
            norm: 4.0,
            sigma: 0.5,
            mean_ones: true,
        };
        let mut r = rng();
        let (bundle, _) = inject_errors(&sys.truth, 5, &schedule, GammaPolicy::FromData, &mut r);
        for t in 0..200 {
            let mut stacked = 0.0;
            for (j, pred) in bundle.predictions[t].iter().enumerate() {
                stacked += (pred - &sys.truth[t + j]).norm_squared();
            }
            let norm = stacked.sqrt();
            let attacked = (67..133).contains(&t) && matches!(t % 5, 0 | 1);
            if attacked {
                assert_abs_diff_eq!(norm, 4.0, epsilon = 1e-9);
            } else {
                assert_abs_diff_eq!(norm, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn truth_scaled_gamma_clips_predictions() {
        let sys = make_lqc_tracking_system(0.2, None, 30).unwrap();
        let schedule = ErrorSchedule::Graded {
            target: 5.0,
            sigma: 0.5,
            mean_ones: true,
        };
        let mut r = rng();
        let (bundle, set) = inject_errors(&sys.truth, 5, &schedule, GammaPolicy::FromTruth, &mut r);
        let radius = match set {
            UncertaintySet::Ball { radius } => radius,
            _ => unreachable!(),
        };
        assert_abs_diff_eq!(radius, bundle.max_truth_norm(), epsilon = 1e-12);
        for window in &bundle.predictions {
            for p in window {
                assert!(p.norm() <= radius + 1e-9);
            }
        }
    }

    #[test]
    fn zero_disturbance_zero_start_gives_zero_cost() {
        let horizon = 20;
        let mut sys = make_lqc_tracking_system(0.2, None, horizon).unwrap();
        sys.truth = alloc::vec![DVector::zeros(4); horizon];
        let mut r = rng();
        let (bundle, _) =
            inject_errors(&sys.truth, 5, &ErrorSchedule::None, GammaPolicy::FromData, &mut r);
        let mut policy = Policy::predictive_mpc(ControlLaw::LqcClosedForm(sys.gains.clone()), 0);
        let log = run_closed_loop(&sys.model, &mut policy, &bundle, &DVector::zeros(4)).unwrap();
        assert_abs_diff_eq!(log.total_cost, 0.0, epsilon = 1e-14);

        // J* = 0 reports an infinite competitive ratio (flagged as None).
        let opt = offline_optimum(
            &sys.model,
            Some(&sys.gains),
            &sys.truth,
            &DVector::zeros(4),
            400,
            &mut r,
        )
        .unwrap();
        assert_eq!(opt.kind, OfflineKind::ClosedForm);
        let report = competitive_report(
            Some(&sys.gains),
            &bundle,
            &log,
            None,
            &[1.0; 5],
            1.0,
            5,
            opt.cost,
        );
        assert!(report.cr.is_none());
    }

    #[test]
    fn cost_recomputation_matches_accumulated() {
        let sys = make_lqc_tracking_system(0.2, Some(10.0), 60).unwrap();
        let schedule = ErrorSchedule::Graded {
            target: 1.5,
            sigma: 0.5,
            mean_ones: true,
        };
        let mut r = rng();
        let (bundle, _) = inject_errors(&sys.truth, 5, &schedule, GammaPolicy::FromData, &mut r);
        let mut policy = Policy::predictive_mpc(ControlLaw::LqcClosedForm(sys.gains.clone()), 0);
        let log = run_closed_loop(&sys.model, &mut policy, &bundle, &DVector::zeros(4)).unwrap();
        let recomputed = log.recompute_cost(&sys.model, &sys.truth);
        assert_abs_diff_eq!(recomputed, log.total_cost, epsilon = 1e-10);
    }

    #[test]
    fn constrained_j_star_paths() {
        let horizon = 25;
        let unconstrained = make_lqc_tracking_system(0.2, None, horizon).unwrap();
        let x0 = DVector::zeros(4);
        let mut r = rng();
        let free = offline_optimum(
            &unconstrained.model,
            Some(&unconstrained.gains),
            &unconstrained.truth,
            &x0,
            400,
            &mut r,
        )
        .unwrap();
        assert_eq!(free.kind, OfflineKind::ClosedForm);

        // A box the optimum never touches: the closed form is exact and
        // the shortcut keeps it.
        let slack = make_lqc_tracking_system(0.2, Some(50.0), horizon).unwrap();
        let boxed = offline_optimum(
            &slack.model,
            Some(&slack.gains),
            &slack.truth,
            &x0,
            400,
            &mut r,
        )
        .unwrap();
        assert_eq!(boxed.kind, OfflineKind::ClosedForm);
        assert_abs_diff_eq!(free.cost, boxed.cost, epsilon = 1e-9 * (1.0 + free.cost));

        // A binding box forces the full-horizon solve and a higher optimum.
        let tight = make_lqc_tracking_system(0.2, Some(0.5), horizon).unwrap();
        let clamped = offline_optimum(
            &tight.model,
            Some(&tight.gains),
            &tight.truth,
            &x0,
            400,
            &mut r,
        )
        .unwrap();
        assert_eq!(clamped.kind, OfflineKind::FullHorizonSolve);
        assert!(clamped.cost >= free.cost - 1e-9);
    }

    #[test]
    fn per_step_diag_zero_for_clairvoyant_predictions() {
        let horizon = 20;
        let sys = make_lqc_tracking_system(0.2, None, horizon).unwrap();
        // Full-horizon perfect predictions: e_u must vanish at lambda = 1.
        let preds: Vec<Vec<DVector<f64>>> =
            (0..horizon).map(|t| sys.truth[t..].to_vec()).collect();
        let noms: Vec<Vec<DVector<f64>>> = preds
            .iter()
            .map(|w| w.iter().map(|v| DVector::zeros(v.len())).collect())
            .collect();
        let bundle = PredictionBundle::new(sys.truth.clone(), preds, noms, horizon).unwrap();
        let mut policy = Policy::predictive_mpc(ControlLaw::LqcClosedForm(sys.gains.clone()), 0);
        let log = run_closed_loop(&sys.model, &mut policy, &bundle, &DVector::zeros(4)).unwrap();
        let diag = per_step_error_diag(&sys.gains, &log, &policy.combined_log, &sys.truth);
        for (e_u, e_x) in diag {
            assert!(e_u < 1e-10);
            assert!(e_x < 1e-10);
        }
    }
}
