//! Constrained receding-horizon trajectory optimization by direct shooting:
//! projected gradient on the control sequence (inputs clamped to their box)
//! with an escalating quadratic penalty on state constraints, warm starts,
//! and a small multistart against nonconvexity.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::model::SystemModel;
use crate::noise;

#[derive(Debug, thiserror::Error)]
pub enum TrajoptError {
    #[error("rollout produced non-finite states")]
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Inner projected-gradient iterations per penalty level.
    pub max_iters: usize,
    /// Projected-gradient residual threshold for convergence.
    pub grad_tol: f64,
    /// State-constraint violation threshold.
    pub violation_tol: f64,
    pub penalty_init: f64,
    pub penalty_max: f64,
    pub penalty_factor: f64,
    /// Try zeros / warm start / jittered starts and keep the best.
    pub multi_start: bool,
    pub jitter_scale: f64,
    pub collect_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 4000,
            grad_tol: 1e-8,
            violation_tol: 1e-6,
            penalty_init: 1e2,
            penalty_max: 1e8,
            penalty_factor: 10.0,
            multi_start: true,
            jitter_scale: 0.1,
            collect_trace: false,
        }
    }
}

pub struct MpcProblem<'a> {
    pub system: &'a SystemModel,
    pub x0: DVector<f64>,
    /// Combined parameters for the window, one per step.
    pub params: Vec<DVector<f64>>,
    /// Previous solution shifted by one step, when available.
    pub warm_start: Option<Vec<DVector<f64>>>,
    pub options: SolveOptions,
}

#[derive(Clone, Debug)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub violation: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub controls: Vec<DVector<f64>>,
    /// Planned states `x_{t+1..t'}`.
    pub states: Vec<DVector<f64>>,
    /// True objective (stage costs plus terminal, no penalty).
    pub objective: f64,
    /// Max positive part over state/path constraints along the plan.
    pub violation: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Projected-gradient fixed-point residual at the final iterate.
    pub pg_residual: f64,
    pub trace: Vec<TraceRow>,
}

/// Roll the dynamics; `None` when a state goes non-finite.
fn rollout(
    system: &SystemModel,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    params: &[DVector<f64>],
) -> Option<Vec<DVector<f64>>> {
    let mut states = Vec::with_capacity(controls.len());
    let mut x = x0.clone();
    for (u, phi) in controls.iter().zip(params) {
        x = system.step(&x, u, phi);
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        states.push(x.clone());
    }
    Some(states)
}

fn box_penalty(system: &SystemModel, x: &DVector<f64>) -> f64 {
    match &system.state_box {
        None => 0.0,
        Some(b) => {
            let mut p = 0.0;
            for i in 0..x.len() {
                let over = f64::max(0.0, x[i] - b.upper[i]);
                let under = f64::max(0.0, b.lower[i] - x[i]);
                p += over * over + under * under;
            }
            p
        }
    }
}

fn box_penalty_grad(system: &SystemModel, x: &DVector<f64>) -> DVector<f64> {
    match &system.state_box {
        None => DVector::zeros(x.len()),
        Some(b) => DVector::from_fn(x.len(), |i, _| {
            2.0 * (f64::max(0.0, x[i] - b.upper[i]) - f64::max(0.0, b.lower[i] - x[i]))
        }),
    }
}

fn plan_violation(system: &SystemModel, states: &[DVector<f64>]) -> f64 {
    let mut worst = 0.0;
    if let Some(b) = &system.state_box {
        for x in states {
            worst = f64::max(worst, b.violation(x));
        }
    }
    worst
}

/// Penalized objective; `INFINITY` when the rollout diverges.
fn penalized_objective(
    system: &SystemModel,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    params: &[DVector<f64>],
    mu: f64,
) -> f64 {
    let states = match rollout(system, x0, controls, params) {
        Some(s) => s,
        None => return f64::INFINITY,
    };
    let mut obj = system.stage_cost(x0, &controls[0]);
    for j in 1..controls.len() {
        obj += system.stage_cost(&states[j - 1], &controls[j]);
    }
    obj += system.terminal_cost(states.last().unwrap());
    for x in &states {
        obj += mu * box_penalty(system, x);
    }
    obj
}

/// Gradient of the penalized shooting objective with respect to every
/// control, by the chain rule through the rollout (adjoint recursion).
fn penalized_gradient(
    system: &SystemModel,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    params: &[DVector<f64>],
    mu: f64,
) -> Option<(Vec<DVector<f64>>, f64, Vec<DVector<f64>>)> {
    let states = rollout(system, x0, controls, params)?;
    let w = controls.len();
    let mut obj = system.stage_cost(x0, &controls[0]);
    for j in 1..w {
        obj += system.stage_cost(&states[j - 1], &controls[j]);
    }
    obj += system.terminal_cost(states.last().unwrap());
    for x in &states {
        obj += mu * box_penalty(system, x);
    }

    // adjoint[j] = d obj / d states[j], accumulated backwards
    let mut grads = alloc::vec![DVector::zeros(system.input_dim); w];
    let last = states.last().unwrap();
    let mut adjoint: DVector<f64> =
        &system.terminal * last * 2.0 + box_penalty_grad(system, last) * mu;
    for j in (0..w).rev() {
        let xj = if j == 0 { x0 } else { &states[j - 1] };
        let (fx, fu) = system.dynamics_jacobians(xj, &controls[j]);
        grads[j] = fu.transpose() * &adjoint + &system.r * &controls[j] * 2.0;
        if j > 0 {
            adjoint = fx.transpose() * adjoint
                + &system.q * xj * 2.0
                + box_penalty_grad(system, xj) * mu;
        }
    }
    Some((grads, obj, states))
}

fn clamp_controls(system: &SystemModel, controls: &mut [DVector<f64>]) {
    if let Some(b) = &system.input_box {
        for u in controls.iter_mut() {
            *u = b.clamp(u);
        }
    }
}

fn flat_dot(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

struct PgdOutcome {
    controls: Vec<DVector<f64>>,
    iterations: usize,
    pg_residual: f64,
}

/// Projected gradient with Barzilai-Borwein steps and Armijo backtracking.
fn projected_gradient(
    system: &SystemModel,
    x0: &DVector<f64>,
    start: &[DVector<f64>],
    params: &[DVector<f64>],
    mu: f64,
    opts: &SolveOptions,
    trace: &mut Vec<TraceRow>,
) -> Option<PgdOutcome> {
    let mut u: Vec<DVector<f64>> = start.to_vec();
    clamp_controls(system, &mut u);
    let (mut g, mut f, mut states) = penalized_gradient(system, x0, &u, params, mu)?;
    let mut alpha = 1.0 / f64::max(1.0, crate::math::sqrt(flat_dot(&g, &g)));
    let mut prev: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)> = None;
    let mut pg_residual = f64::INFINITY;
    let mut iter = 0;

    while iter < opts.max_iters {
        iter += 1;
        // Residual of the fixed point u = P_U(u - g).
        let mut probe: Vec<DVector<f64>> = u.iter().zip(&g).map(|(ui, gi)| ui - gi).collect();
        clamp_controls(system, &mut probe);
        pg_residual = crate::math::sqrt(
            probe
                .iter()
                .zip(&u)
                .map(|(p, ui)| (p - ui).norm_squared())
                .sum::<f64>(),
        );
        if pg_residual < opts.grad_tol {
            break;
        }

        if let Some((pu, pg)) = &prev {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..u.len() {
                let s = &u[i] - &pu[i];
                let y = &g[i] - &pg[i];
                ss += s.norm_squared();
                sy += s.dot(&y);
            }
            if sy > 1e-300 && ss > 0.0 {
                alpha = (ss / sy).clamp(1e-16, 1e16);
            }
        }

        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand: Vec<DVector<f64>> =
                u.iter().zip(&g).map(|(ui, gi)| ui - gi * step).collect();
            clamp_controls(system, &mut cand);
            let dir: Vec<DVector<f64>> = cand.iter().zip(&u).map(|(c, ui)| c - ui).collect();
            let decrease = flat_dot(&g, &dir);
            let fc = penalized_objective(system, x0, &cand, params, mu);
            if fc.is_finite() && fc <= f + 1e-4 * decrease {
                prev = Some((core::mem::replace(&mut u, cand), core::mem::take(&mut g)));
                let (ng, nf, ns) = penalized_gradient(system, x0, &u, params, mu)?;
                g = ng;
                f = nf;
                states = ns;
                accepted = true;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                break;
            }
        }
        if opts.collect_trace {
            trace.push(TraceRow {
                iteration: iter,
                objective: f,
                violation: plan_violation(system, &states),
                step_size: step,
            });
        }
        if !accepted {
            break; // no descent direction left at float precision
        }
    }
    Some(PgdOutcome {
        controls: u,
        iterations: iter,
        pg_residual,
    })
}

/// Damped Newton on the flattened controls, used to polish small windows
/// where the first-order iteration stalls (the arm's `|x|` kink leaves
/// gradient discontinuities that chatter projected-gradient steps). The
/// Hessian is finite-differenced from the analytic gradient. Only touches
/// coordinates strictly inside the input box.
fn newton_polish(
    system: &SystemModel,
    x0: &DVector<f64>,
    start: &[DVector<f64>],
    params: &[DVector<f64>],
    mu: f64,
    opts: &SolveOptions,
) -> Option<(Vec<DVector<f64>>, f64)> {
    let w = start.len();
    let m = system.input_dim;
    let dim = w * m;
    if dim > 16 {
        return None;
    }
    let pack = |u: &[DVector<f64>]| {
        let mut flat = DVector::zeros(dim);
        for (j, uj) in u.iter().enumerate() {
            flat.rows_mut(j * m, m).copy_from(uj);
        }
        flat
    };
    let unpack = |flat: &DVector<f64>| {
        (0..w)
            .map(|j| flat.rows(j * m, m).into_owned())
            .collect::<Vec<_>>()
    };
    let grad_flat = |u: &[DVector<f64>]| {
        penalized_gradient(system, x0, u, params, mu).map(|(g, f, _)| (pack(&g), f))
    };

    let mut u = start.to_vec();
    clamp_controls(system, &mut u);
    let (mut g, mut f) = grad_flat(&u)?;
    let mut residual = f64::INFINITY;
    for _ in 0..40 {
        let mut flat = pack(&u);
        // Projected-gradient residual on the box.
        let mut probe = unpack(&(&flat - &g));
        clamp_controls(system, &mut probe);
        residual = crate::math::sqrt(
            probe
                .iter()
                .zip(&u)
                .map(|(p, ui)| (p - ui).norm_squared())
                .sum::<f64>(),
        );
        if residual < opts.grad_tol {
            break;
        }
        let h_step = 1e-6 * f64::max(1.0, flat.amax());
        let mut hess = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let mut up = flat.clone();
            up[i] += h_step;
            let mut dn = flat.clone();
            dn[i] -= h_step;
            let (gu, _) = grad_flat(&unpack(&up))?;
            let (gd, _) = grad_flat(&unpack(&dn))?;
            hess.set_column(i, &((gu - gd) / (2.0 * h_step)));
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        // Levenberg damping until the step decreases the objective.
        let mut lm = 1e-10 * f64::max(1.0, hess.amax());
        let mut moved = false;
        for _ in 0..25 {
            let damped = &hess + DMatrix::identity(dim, dim) * lm;
            if let Some(step) = damped.lu().solve(&g) {
                let cand_flat = &flat - &step;
                let mut cand = unpack(&cand_flat);
                clamp_controls(system, &mut cand);
                let fc = penalized_objective(system, x0, &cand, params, mu);
                if fc.is_finite() && fc < f {
                    u = cand;
                    flat = pack(&u);
                    let (ng, nf) = grad_flat(&u)?;
                    g = ng;
                    f = nf;
                    moved = true;
                    break;
                }
            }
            lm = f64::max(lm * 10.0, 1e-12);
        }
        if !moved {
            break;
        }
    }
    let _ = f;
    Some((u, residual))
}

/// A few sweeps of per-coordinate golden-section descent. Slow but immune
/// to the gradient discontinuities of the arm's `|x|` kink, where both the
/// projected-gradient and Newton iterations chatter.
fn coordinate_polish(
    system: &SystemModel,
    x0: &DVector<f64>,
    start: &[DVector<f64>],
    params: &[DVector<f64>],
    mu: f64,
) -> Vec<DVector<f64>> {
    let mut u = start.to_vec();
    clamp_controls(system, &mut u);
    let mut f = penalized_objective(system, x0, &u, params, mu);
    let inv_phi = (crate::math::sqrt(5.0) - 1.0) / 2.0;
    for sweep in 0..6 {
        let width = 1e-2 / (10f64).powi(sweep);
        let mut improved = false;
        for j in 0..u.len() {
            for i in 0..system.input_dim {
                let center = u[j][i];
                let (mut lo, mut hi) = (center - width, center + width);
                if let Some(b) = &system.input_box {
                    lo = f64::max(lo, b.lower[i]);
                    hi = f64::min(hi, b.upper[i]);
                }
                let eval = |v: f64, u: &mut Vec<DVector<f64>>| {
                    u[j][i] = v;
                    penalized_objective(system, x0, u, params, mu)
                };
                let mut x1 = hi - inv_phi * (hi - lo);
                let mut x2 = lo + inv_phi * (hi - lo);
                let mut f1 = eval(x1, &mut u);
                let mut f2 = eval(x2, &mut u);
                for _ in 0..40 {
                    if f1 <= f2 {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - inv_phi * (hi - lo);
                        f1 = eval(x1, &mut u);
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + inv_phi * (hi - lo);
                        f2 = eval(x2, &mut u);
                    }
                }
                let best = if f1 <= f2 { x1 } else { x2 };
                let fb = eval(best, &mut u);
                if fb < f - 1e-15 {
                    f = fb;
                    improved = true;
                } else {
                    u[j][i] = center;
                }
            }
        }
        if !improved {
            break;
        }
    }
    u
}

/// One-sided stationarity certificate: the worst descent slope over all
/// box-feasible coordinate directions. Near-zero means the iterate is a
/// nonsmooth local minimum even when the (discontinuous) gradient is not.
fn directional_stationarity(
    system: &SystemModel,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    params: &[DVector<f64>],
    mu: f64,
) -> f64 {
    let f0 = penalized_objective(system, x0, u, params, mu);
    let h = 1e-7;
    let mut worst = 0.0f64;
    let mut cand = u.to_vec();
    for j in 0..u.len() {
        for i in 0..system.input_dim {
            for sgn in [-1.0, 1.0] {
                let v = u[j][i] + sgn * h;
                if let Some(b) = &system.input_box {
                    if v < b.lower[i] || v > b.upper[i] {
                        continue;
                    }
                }
                cand[j][i] = v;
                let fc = penalized_objective(system, x0, &cand, params, mu);
                cand[j][i] = u[j][i];
                worst = f64::min(worst, (fc - f0) / h);
            }
        }
    }
    worst
}

/// Solve one receding-horizon problem. Returns the best iterate even when
/// the iteration budget runs out (`converged = false` in that case); errors
/// only if every start diverges to non-finite states.
pub fn solve_mpc(problem: &MpcProblem, rng: &mut ChaCha8Rng) -> Result<MpcSolution, TrajoptError> {
    let system = problem.system;
    let w = problem.params.len();
    assert!(w >= 1, "window must be at least 1");
    if !problem.x0.iter().all(|v| v.is_finite()) {
        return Err(TrajoptError::NonFinite);
    }

    let zeros = alloc::vec![DVector::zeros(system.input_dim); w];
    let mut starts: Vec<Vec<DVector<f64>>> = alloc::vec![zeros.clone()];
    if let Some(warm) = &problem.warm_start {
        assert_eq!(warm.len(), w, "warm start length mismatch");
        starts.push(warm.clone());
    }
    if problem.options.multi_start {
        let jitter: Vec<DVector<f64>> = (0..w)
            .map(|_| {
                DVector::from_fn(system.input_dim, |_, _| {
                    problem.options.jitter_scale * noise::standard_normal(rng)
                })
            })
            .collect();
        starts.push(jitter);
    }

    let has_state_constraints = system.state_box.is_some();
    let mut best: Option<(MpcSolution, f64)> = None;
    let mut best_residual = f64::INFINITY;
    let mut total_iters = 0;
    let mut trace = Vec::new();

    for start in &starts {
        let mut mu = if has_state_constraints {
            problem.options.penalty_init
        } else {
            0.0
        };
        let mut current = start.clone();
        let mut final_residual = f64::INFINITY;
        let outcome = loop {
            let out = match projected_gradient(
                system,
                &problem.x0,
                &current,
                &problem.params,
                mu,
                &problem.options,
                &mut trace,
            ) {
                Some(o) => o,
                None => break None,
            };
            total_iters += out.iterations;
            final_residual = out.pg_residual;
            current = out.controls;
            if final_residual >= problem.options.grad_tol {
                if let Some((polished, residual)) =
                    newton_polish(system, &problem.x0, &current, &problem.params, mu, &problem.options)
                {
                    current = polished;
                    final_residual = residual;
                }
            }
            let mut stationary = final_residual < problem.options.grad_tol;
            if !stationary && current.len() * system.input_dim <= 16 {
                current = coordinate_polish(system, &problem.x0, &current, &problem.params, mu);
                let slope =
                    directional_stationarity(system, &problem.x0, &current, &problem.params, mu);
                stationary = slope >= -1e-8;
            }
            let states = match rollout(system, &problem.x0, &current, &problem.params) {
                Some(s) => s,
                None => break None,
            };
            let violation = plan_violation(system, &states);
            if violation < problem.options.violation_tol
                || !has_state_constraints
                || mu >= problem.options.penalty_max
            {
                break Some((current.clone(), states, violation, stationary));
            }
            mu *= problem.options.penalty_factor;
        };

        let (controls, states, violation, stationary) = match outcome {
            Some(o) => o,
            None => continue,
        };
        let mut objective = system.stage_cost(&problem.x0, &controls[0]);
        for j in 1..w {
            objective += system.stage_cost(&states[j - 1], &controls[j]);
        }
        objective += system.terminal_cost(states.last().unwrap());
        if !objective.is_finite() {
            continue;
        }
        let unorm = controls.iter().map(|u| u.norm_squared()).sum::<f64>();
        let candidate = MpcSolution {
            controls,
            states,
            objective,
            violation,
            converged: stationary && violation < problem.options.violation_tol,
            iterations: total_iters,
            pg_residual: final_residual,
            trace: Vec::new(),
        };
        let better = match &best {
            None => true,
            Some((b, b_unorm)) => {
                (candidate.objective, candidate.violation, unorm)
                    < (b.objective, b.violation, *b_unorm)
            }
        };
        if better {
            best_residual = final_residual;
            best = Some((candidate, unorm));
        }
    }
    let _ = best_residual;

    match best {
        Some((mut sol, _)) => {
            sol.iterations = total_iters;
            sol.trace = trace;
            Ok(sol)
        }
        None => Err(TrajoptError::NonFinite),
    }
}

/// Tolerance under which a constraint violation counts as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct FeasibilityReport {
    pub pass: bool,
    pub worst_violation: f64,
    pub next_state: DVector<f64>,
}

/// Check one executed tuple: `u` in its box, `h <= 0`, and the successor
/// state inside the state box.
pub fn feasibility_check(
    system: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    phi: &DVector<f64>,
) -> FeasibilityReport {
    let mut worst = 0.0f64;
    if let Some(b) = &system.input_box {
        worst = f64::max(worst, b.violation(u));
    }
    let h = system.path_constraint(x, u, phi);
    for i in 0..h.len() {
        worst = f64::max(worst, h[i]);
    }
    let next = system.step(x, u, phi);
    if let Some(b) = &system.state_box {
        worst = f64::max(worst, b.violation(&next));
    }
    FeasibilityReport {
        pass: worst <= FEASIBILITY_TOL,
        worst_violation: worst,
        next_state: next,
    }
}

/// Empirical exponentially-decaying perturbation table: for each offset `j`,
/// the worst observed `||u(phi') - u(phi)|| / ||delta||` over random
/// perturbations of the parameter at offset `j`, monotone-enveloped.
pub fn estimate_edpb<F, S>(
    mut action: F,
    window: usize,
    param_dim: usize,
    trials: usize,
    delta_scale: f64,
    mut sample_param: S,
    rng: &mut ChaCha8Rng,
) -> Vec<f64>
where
    F: FnMut(usize, &[DVector<f64>]) -> DVector<f64>,
    S: FnMut(&mut ChaCha8Rng) -> DVector<f64>,
{
    assert!(trials >= 1);
    let mut table = alloc::vec![0.0f64; window];
    for trial in 0..trials {
        let base: Vec<DVector<f64>> = (0..window).map(|_| sample_param(rng)).collect();
        let u0 = action(trial, &base);
        for j in 0..window {
            let mut delta = DVector::from_fn(param_dim, |_, _| noise::standard_normal(rng));
            let n = delta.norm();
            if n == 0.0 {
                continue;
            }
            delta *= delta_scale / n;
            let mut perturbed = base.clone();
            perturbed[j] += &delta;
            let uj = action(trial, &perturbed);
            table[j] = f64::max(table[j], (&uj - &u0).norm() / delta_scale);
        }
    }
    crate::confidence::monotone_envelope(&table)
}

/// Numeric regularity diagnostics on a converged solution: smallest
/// singular value of the active-constraint Jacobian and smallest eigenvalue
/// of the reduced Hessian of the full-space Lagrangian. Advisory only.
#[derive(Clone, Debug)]
pub struct RegularityRecord {
    pub min_singular_jacobian: f64,
    pub min_reduced_hessian_eig: f64,
    pub active_inequalities: usize,
    pub nullspace_dim: usize,
}

pub fn regularity_probe(
    system: &SystemModel,
    x0: &DVector<f64>,
    params: &[DVector<f64>],
    solution: &MpcSolution,
) -> RegularityRecord {
    let w = params.len();
    let n = system.state_dim;
    let m = system.input_dim;
    let dim = w * (m + n); // primal vector (u_0..u_{w-1}, x_1..x_w)
    let u_at = |p: &DVector<f64>, j: usize| p.rows(j * m, m).into_owned();
    let x_at = |p: &DVector<f64>, j: usize| {
        // j in 1..=w
        p.rows(w * m + (j - 1) * n, n).into_owned()
    };
    let mut point = DVector::zeros(dim);
    for j in 0..w {
        point.rows_mut(j * m, m).copy_from(&solution.controls[j]);
    }
    for j in 1..=w {
        point
            .rows_mut(w * m + (j - 1) * n, n)
            .copy_from(&solution.states[j - 1]);
    }

    // Equality Jacobian of c_j = x_{j+1} - f(x_j, u_j; phi_j).
    let eq_jacobian = |p: &DVector<f64>| {
        let mut jac = DMatrix::zeros(w * n, dim);
        for j in 0..w {
            let xj = if j == 0 { x0.clone() } else { x_at(p, j) };
            let uj = u_at(p, j);
            let (fx, fu) = system.dynamics_jacobians(&xj, &uj);
            jac.view_mut((j * n, j * m), (n, m)).copy_from(&(-&fu));
            if j > 0 {
                jac.view_mut((j * n, w * m + (j - 1) * n), (n, n))
                    .copy_from(&(-&fx));
            }
            jac.view_mut((j * n, w * m + j * n), (n, n))
                .copy_from(&DMatrix::identity(n, n));
        }
        jac
    };

    // Active box rows (gradients are +/- unit vectors).
    const ACTIVE_TOL: f64 = 1e-6;
    let mut active_rows: Vec<DVector<f64>> = Vec::new();
    if let Some(b) = &system.input_box {
        for j in 0..w {
            for i in 0..m {
                let v = solution.controls[j][i];
                if (v - b.upper[i]).abs() <= ACTIVE_TOL {
                    let mut row = DVector::zeros(dim);
                    row[j * m + i] = 1.0;
                    active_rows.push(row);
                } else if (v - b.lower[i]).abs() <= ACTIVE_TOL {
                    let mut row = DVector::zeros(dim);
                    row[j * m + i] = -1.0;
                    active_rows.push(row);
                }
            }
        }
    }
    if let Some(b) = &system.state_box {
        for j in 1..=w {
            for i in 0..n {
                let v = solution.states[j - 1][i];
                if (v - b.upper[i]).abs() <= ACTIVE_TOL {
                    let mut row = DVector::zeros(dim);
                    row[w * m + (j - 1) * n + i] = 1.0;
                    active_rows.push(row);
                } else if (v - b.lower[i]).abs() <= ACTIVE_TOL {
                    let mut row = DVector::zeros(dim);
                    row[w * m + (j - 1) * n + i] = -1.0;
                    active_rows.push(row);
                }
            }
        }
    }
    let active_inequalities = active_rows.len();

    let jac_eq = eq_jacobian(&point);
    let rows = w * n + active_rows.len();
    let mut jac = DMatrix::zeros(rows, dim);
    jac.view_mut((0, 0), (w * n, dim)).copy_from(&jac_eq);
    for (i, row) in active_rows.iter().enumerate() {
        jac.view_mut((w * n + i, 0), (1, dim))
            .copy_from(&row.transpose());
    }

    // sigma_min(J) via the Gram spectrum; diagnostic precision is enough.
    let gram_rows = &jac * jac.transpose();
    let (min_row_eig, _) = crate::lqc::sym_eig_range(&gram_rows);
    let min_singular_jacobian = crate::math::sqrt(f64::max(min_row_eig, 0.0));

    // Objective gradient in the full space.
    let obj_grad = |p: &DVector<f64>| {
        let mut grad = DVector::zeros(dim);
        for j in 0..w {
            let uj = u_at(p, j);
            grad.rows_mut(j * m, m).copy_from(&(&system.r * &uj * 2.0));
        }
        for j in 1..w {
            let xj = x_at(p, j);
            grad.rows_mut(w * m + (j - 1) * n, n)
                .copy_from(&(&system.q * &xj * 2.0));
        }
        let xw = x_at(p, w);
        grad.rows_mut(w * m + (w - 1) * n, n)
            .copy_from(&(&system.terminal * &xw * 2.0));
        grad
    };

    // Multipliers from stationarity (least squares through the Gram system).
    let g0 = obj_grad(&point);
    let jt = jac.transpose();
    let gram = &jac * &jt;
    let rhs = &jac * (-&g0);
    let multipliers = gram
        .clone()
        .lu()
        .solve(&rhs)
        .unwrap_or_else(|| DVector::zeros(rows));

    // Lagrangian gradient: only the equality block curves (box rows are linear).
    let eq_multipliers = multipliers.rows(0, w * n).into_owned();
    let lag_grad = |p: &DVector<f64>| obj_grad(p) + eq_jacobian(p).transpose() * &eq_multipliers;

    // Central-difference Hessian of the Lagrangian.
    let h_step = 1e-6 * f64::max(1.0, point.amax());
    let mut hess = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let mut plus = point.clone();
        plus[i] += h_step;
        let mut minus = point.clone();
        minus[i] -= h_step;
        let col = (lag_grad(&plus) - lag_grad(&minus)) / (2.0 * h_step);
        hess.set_column(i, &col);
    }
    let hess = (&hess + hess.transpose()) * 0.5;

    // Nullspace of the active Jacobian from the Gram spectrum.
    let gram_cols = jac.transpose() * &jac;
    let eig = gram_cols.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut null_cols: Vec<usize> = Vec::new();
    for i in 0..dim {
        if eig.eigenvalues[i] <= 1e-12 * scale {
            null_cols.push(i);
        }
    }
    let nullspace_dim = null_cols.len();
    let min_reduced_hessian_eig = if nullspace_dim == 0 {
        f64::INFINITY
    } else {
        let mut z = DMatrix::zeros(dim, nullspace_dim);
        for (c, &i) in null_cols.iter().enumerate() {
            z.set_column(c, &eig.eigenvectors.column(i));
        }
        let reduced = z.transpose() * &hess * &z;
        crate::lqc::sym_eig_range(&reduced).0
    };

    RegularityRecord {
        min_singular_jacobian,
        min_reduced_hessian_eig,
        active_inequalities,
        nullspace_dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_lqc_tracking_system, make_robot_arm_system};
    use approx::assert_abs_diff_eq;

    fn rng() -> ChaCha8Rng {
        noise::substream(1234, "trajopt-tests", 0)
    }

    fn sv(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn arm_zero_problem_has_zero_solution() {
        let arm = make_robot_arm_system(0.5, 0.2, 0.1, 10).unwrap();
        let problem = MpcProblem {
            system: &arm,
            x0: sv(0.0),
            params: alloc::vec![sv(0.0); 5],
            warm_start: None,
            options: SolveOptions::default(),
        };
        let sol = solve_mpc(&problem, &mut rng()).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-12);
        for u in &sol.controls {
            assert!(u.norm() < 1e-7);
        }
    }

    #[test]
    fn arm_window_one_matches_grid_oracle() {
        let arm = make_robot_arm_system(0.5, 0.2, 0.1, 10).unwrap();
        let mut r = rng();
        for trial in 0..10 {
            let d = 0.05 * (trial as f64 - 4.5) / 4.5;
            let problem = MpcProblem {
                system: &arm,
                x0: sv(0.0),
                params: alloc::vec![sv(d)],
                warm_start: None,
                options: SolveOptions::default(),
            };
            let sol = solve_mpc(&problem, &mut r).unwrap();

            // Iteratively refined grid over u in U (three 2000-point passes).
            let objective = |u: f64| {
                let x1 = 0.0 + 0.5 * 0f64.sin() + 0.2 * u * 1.0 + d;
                0.1 * u * u + x1 * x1
            };
            let (mut lo, mut hi) = (-1000.0, 1000.0);
            let mut best = (0.0, f64::INFINITY);
            for _ in 0..3 {
                best = (lo, objective(lo));
                for i in 0..=2000 {
                    let u = lo + (hi - lo) * i as f64 / 2000.0;
                    let v = objective(u);
                    if v < best.1 {
                        best = (u, v);
                    }
                }
                let width = (hi - lo) / 2000.0 * 2.0;
                lo = (best.0 - width).max(-1000.0);
                hi = (best.0 + width).min(1000.0);
            }
            assert!(
                (sol.objective - best.1).abs() <= 1e-6,
                "trial {trial}: solver {} grid {}",
                sol.objective,
                best.1
            );
        }
    }

    #[test]
    fn lqc_unconstrained_matches_closed_form() {
        let sys = make_lqc_tracking_system(0.2, None, 30).unwrap();
        let mut r = rng();
        for t in [0usize, 7, 19] {
            let window = 3;
            let params: Vec<DVector<f64>> = (t..t + window).map(|i| sys.truth[i].clone()).collect();
            let x0 = DVector::from_fn(4, |_, _| noise::standard_normal(&mut r));
            let problem = MpcProblem {
                system: &sys.model,
                x0: x0.clone(),
                params: params.clone(),
                warm_start: None,
                options: SolveOptions::default(),
            };
            let sol = solve_mpc(&problem, &mut r).unwrap();
            let closed = crate::lqc::receding_action(&sys.gains, &x0, &params);
            assert!(
                (&sol.controls[0] - &closed).norm() <= 1e-6,
                "t={t}: {} vs {}",
                sol.controls[0],
                closed
            );
        }
    }

    #[test]
    fn shooting_gradient_matches_central_differences() {
        let arm = make_robot_arm_system(0.5, 0.2, 0.1, 10).unwrap();
        let mut r = rng();
        for _ in 0..30 {
            let w = 5;
            let x0 = sv(0.15 * noise::standard_normal(&mut r));
            let params: Vec<DVector<f64>> =
                (0..w).map(|_| sv(0.05 * noise::standard_normal(&mut r))).collect();
            let controls: Vec<DVector<f64>> =
                (0..w).map(|_| sv(noise::standard_normal(&mut r))).collect();
            let mu = 100.0;
            let (grads, _, _) = penalized_gradient(&arm, &x0, &controls, &params, mu).unwrap();
            for j in 0..w {
                let h = 1e-6;
                let mut up = controls.clone();
                up[j][0] += h;
                let mut dn = controls.clone();
                dn[j][0] -= h;
                let fd = (penalized_objective(&arm, &x0, &up, &params, mu)
                    - penalized_objective(&arm, &x0, &dn, &params, mu))
                    / (2.0 * h);
                let denom = f64::max(1.0, grads[j][0].abs());
                assert!(
                    (grads[j][0] - fd).abs() / denom <= 1e-5,
                    "j={j}: analytic {} fd {}",
                    grads[j][0],
                    fd
                );
            }
        }
    }

    #[test]
    fn feasibility_check_cases() {
        let arm = make_robot_arm_system(0.5, 0.2, 0.1, 10).unwrap();
        let ok = feasibility_check(&arm, &sv(0.0), &sv(0.0), &sv(0.0));
        assert!(ok.pass);
        assert_eq!(ok.worst_violation, 0.0);

        // 0.19 + 0.5 sin(0.19) + 0.1 = 0.3844... > 0.2
        let bad = feasibility_check(&arm, &sv(0.19), &sv(0.0), &sv(0.1));
        assert!(!bad.pass);
        assert_abs_diff_eq!(
            bad.next_state[0],
            0.19 + 0.5 * (0.19f64).sin() + 0.1,
            epsilon = 1e-12
        );
        assert!(bad.worst_violation > 0.18);

        let over = feasibility_check(&arm, &sv(0.0), &sv(2000.0), &sv(0.0));
        assert!(!over.pass);
        assert!(over.worst_violation >= 1000.0);
    }

    #[test]
    fn penalty_keeps_state_inside_box() {
        let arm = make_robot_arm_system(0.5, 0.2, 0.1, 10).unwrap();
        // A strong positive disturbance forecast forces the plan to fight
        // the state bound.
        let problem = MpcProblem {
            system: &arm,
            x0: sv(0.15),
            params: alloc::vec![sv(0.08); 5],
            warm_start: None,
            options: SolveOptions::default(),
        };
        let sol = solve_mpc(&problem, &mut rng()).unwrap();
        assert!(sol.violation < 1e-6, "violation {}", sol.violation);
        for x in &sol.states {
            assert!(x[0].abs() <= 0.2 + 1e-6);
        }
    }

    #[test]
    fn edpb_lqc_respects_closed_form_bound() {
        let sys = make_lqc_tracking_system(0.2, None, 50).unwrap();
        let g = sys.gains.clone();
        let mut r = rng();
        let x = DVector::from_fn(4, |_, _| noise::standard_normal(&mut r));
        let table = estimate_edpb(
            |_, params| crate::lqc::receding_action(&g, &x, params),
            5,
            4,
            8,
            0.1,
            |rng| DVector::from_fn(4, |_, _| 0.3 * noise::standard_normal(rng)),
            &mut r,
        );
        let m_norm = crate::lqc::operator_norm(&g.m);
        let p_norm = crate::lqc::operator_norm(&g.p);
        for (j, rho_hat) in table.iter().enumerate() {
            let bound = g.c_f * m_norm * p_norm * g.rho_f.powi(j as i32);
            assert!(
                *rho_hat <= bound + 1e-9,
                "offset {j}: estimate {rho_hat} bound {bound}"
            );
        }
        // Monotone after enveloping.
        for j in 1..table.len() {
            assert!(table[j] <= table[j - 1] + 1e-15);
        }
    }

    #[test]
    fn regularity_probe_lqc_unconstrained() {
        let sys = make_lqc_tracking_system(0.2, None, 30).unwrap();
        let mut r = rng();
        let params: Vec<DVector<f64>> = alloc::vec![sys.truth[0].clone(), sys.truth[1].clone()];
        let problem = MpcProblem {
            system: &sys.model,
            x0: DVector::from_fn(4, |_, _| 0.3 * noise::standard_normal(&mut r)),
            params: params.clone(),
            warm_start: None,
            options: SolveOptions::default(),
        };
        let sol = solve_mpc(&problem, &mut r).unwrap();
        let record = regularity_probe(&sys.model, &problem.x0, &params, &sol);
        // No inequalities active: the Jacobian is the dynamics block alone
        // and LICQ holds with a healthy margin.
        assert_eq!(record.active_inequalities, 0);
        assert!(record.min_singular_jacobian > 0.5);
        // Reduced Hessian of the quadratic objective dominates 2 lambda_min(R) > lambda_min(R).
        let (lam_r, _) = crate::lqc::sym_eig_range(&sys.gains.r);
        assert!(record.min_reduced_hessian_eig >= lam_r);
        assert_eq!(record.nullspace_dim, 2 * sys.model.input_dim);
    }

    #[test]
    fn regularity_probe_reports_active_state_rows() {
        // One-step instance whose unconstrained optimum lands beyond the
        // state box, so the bound must be active at the solution.
        let arm = make_robot_arm_system(0.5, 0.2, 0.1, 10).unwrap();
        let problem = MpcProblem {
            system: &arm,
            x0: sv(0.18),
            params: alloc::vec![sv(0.09)],
            warm_start: None,
            options: SolveOptions::default(),
        };
        let sol = solve_mpc(&problem, &mut rng()).unwrap();
        assert!((sol.states[0][0] - 0.2).abs() <= 1e-6, "state {}", sol.states[0][0]);
        let record = regularity_probe(&arm, &problem.x0, &problem.params, &sol);
        assert!(record.active_inequalities >= 1);
    }
}
