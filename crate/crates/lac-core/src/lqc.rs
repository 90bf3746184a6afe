//! Closed-form machinery for the linear-quadratic case: the discrete
//! algebraic Riccati equation, feedback gains, the explicit receding-horizon
//! action, the clairvoyant optimum, and the exact dynamic-regret witness.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, thiserror::Error)]
pub enum LqcError {
    #[error("Riccati iteration did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("{name} is asymmetric beyond 1e-8 (max deviation {dev:.3e})")]
    Asymmetric { name: &'static str, dev: f64 },
    #[error("closed loop unstable: spectral radius {0:.6} >= 1")]
    UnstableClosedLoop(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
}

/// Largest singular value (operator 2-norm).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Smallest singular value.
pub fn min_singular(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().min()
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen().eigenvalues;
    (eig.min(), eig.max())
}

/// Spectral radius via the complex eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0, |acc, c| {
            f64::max(acc, crate::math::sqrt(c.re * c.re + c.im * c.im))
        })
}

/// DARE solution and everything derived from it.
#[derive(Clone, Debug)]
pub struct LqcGains {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Cost-to-go `P` solving `P = Q + A'PA - A'PB (R+B'PB)^{-1} B'PA`.
    pub p: DMatrix<f64>,
    /// Feedback gain `K = (R+B'PB)^{-1} B'PA`.
    pub k: DMatrix<f64>,
    /// Closed loop `F = A - BK`.
    pub f: DMatrix<f64>,
    /// `H = B (R+B'PB)^{-1} B'`.
    pub h: DMatrix<f64>,
    /// `S = R + B'PB` and `M = S^{-1} B'`, cached for the action formula.
    pub s: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub c_f: f64,
    pub rho_f: f64,
    pub riccati_residual: f64,
}

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITERS: usize = 100_000;

fn check_symmetric(m: &DMatrix<f64>, name: &'static str) -> Result<(), LqcError> {
    let dev = (m - m.transpose()).amax();
    if dev > 1e-8 {
        return Err(LqcError::Asymmetric { name, dev });
    }
    Ok(())
}

fn riccati_map(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let s_inv = s.try_inverse()?;
    let next = q + a.transpose() * p * a - a.transpose() * p * b * s_inv * (&bt_p * a);
    // Symmetrize each iterate; the map preserves symmetry only in exact arithmetic.
    Some((&next + next.transpose()) * 0.5)
}

/// Solve the DARE by fixed-point iteration from `P_0 = Q` and package the
/// gains. `horizon` is the window over which the decay inequality
/// `||F^t|| <= C_F rho_F^t` is certified.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    horizon: usize,
) -> Result<LqcGains, LqcError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n {
        return Err(LqcError::DimensionMismatch("A/B/Q shapes"));
    }
    let m_dim = b.ncols();
    if r.nrows() != m_dim || r.ncols() != m_dim {
        return Err(LqcError::DimensionMismatch("R shape"));
    }
    check_symmetric(q, "Q")?;
    check_symmetric(r, "R")?;

    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..DARE_MAX_ITERS {
        let next = riccati_map(&p, a, b, q, r).ok_or(LqcError::NonConvergence(DARE_MAX_ITERS))?;
        let delta = (&next - &p).norm();
        p = next;
        if delta < DARE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LqcError::NonConvergence(DARE_MAX_ITERS));
    }
    let residual = (riccati_map(&p, a, b, q, r).ok_or(LqcError::NonConvergence(DARE_MAX_ITERS))?
        - &p)
        .norm();

    let s = r + b.transpose() * &p * b;
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or(LqcError::NonConvergence(DARE_MAX_ITERS))?;
    let k = &s_inv * b.transpose() * &p * a;
    let f = a - b * &k;
    let h = b * &s_inv * b.transpose();
    let m = &s_inv * b.transpose();
    let (c_f, rho_f) = decay_constants(&f, horizon)?;

    Ok(LqcGains {
        a: a.clone(),
        b: b.clone(),
        q: q.clone(),
        r: r.clone(),
        p,
        k,
        f,
        h,
        s,
        m,
        c_f,
        rho_f,
        riccati_residual: residual,
    })
}

/// `rho_F` as the midpoint between the spectral radius and 1, and `C_F`
/// fitted so that `||F^t|| <= C_F rho_F^t` holds for every `t <= horizon`.
pub fn decay_constants(f: &DMatrix<f64>, horizon: usize) -> Result<(f64, f64), LqcError> {
    let sr = spectral_radius(f);
    if sr >= 1.0 {
        return Err(LqcError::UnstableClosedLoop(sr));
    }
    let rho = (1.0 + sr) / 2.0;
    let mut c = 1.0; // t = 0: ||I|| = 1
    let mut power = DMatrix::identity(f.nrows(), f.nrows());
    let mut rho_t = 1.0;
    for _ in 1..=horizon {
        power = &power * f;
        rho_t *= rho;
        c = f64::max(c, operator_norm(&power) / rho_t);
    }
    Ok((c, rho))
}

/// `sum_j (F')^j P phi_j` accumulated backwards (Horner on `F'`).
pub fn weighted_param_sum(gains: &LqcGains, params: &[DVector<f64>]) -> DVector<f64> {
    let ft = gains.f.transpose();
    let mut acc = DVector::zeros(gains.a.nrows());
    for phi in params.iter().rev() {
        acc = &gains.p * phi + &ft * acc;
    }
    acc
}

/// Explicit receding-horizon action
/// `u = -K x - (R+B'PB)^{-1} B' sum_j (F')^j P phi_j` (unclamped).
pub fn receding_action(gains: &LqcGains, x: &DVector<f64>, params: &[DVector<f64>]) -> DVector<f64> {
    assert!(!params.is_empty(), "receding action needs at least one parameter");
    assert_eq!(x.len(), gains.a.nrows(), "state dimension mismatch");
    assert!(
        params.iter().all(|p| p.len() == gains.a.nrows()),
        "parameter dimension mismatch"
    );
    -(&gains.k * x) - &gains.m * weighted_param_sum(gains, params)
}

/// Tail sums `w_t = sum_{tau >= t} (F')^{tau-t} P phi*_tau` for the whole
/// horizon (index `T` holds the zero vector).
pub fn clairvoyant_tail_sums(gains: &LqcGains, truth: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = gains.a.nrows();
    let ft = gains.f.transpose();
    let mut sums = alloc::vec![DVector::zeros(n); truth.len() + 1];
    for t in (0..truth.len()).rev() {
        sums[t] = &gains.p * &truth[t] + &ft * &sums[t + 1];
    }
    sums
}

/// Clairvoyant full-horizon optimal trajectory and cost.
#[derive(Clone, Debug)]
pub struct ClairvoyantSolution {
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Roll the unconstrained offline optimum
/// `u*_t = -K x_t - (R+B'PB)^{-1} B' w_{t+?}`, accumulating the quadratic cost
/// with terminal weight `P`.
pub fn clairvoyant_optimal(
    gains: &LqcGains,
    x0: &DVector<f64>,
    truth: &[DVector<f64>],
) -> ClairvoyantSolution {
    let tails = clairvoyant_tail_sums(gains, truth);
    let mut states = Vec::with_capacity(truth.len() + 1);
    let mut actions = Vec::with_capacity(truth.len());
    let mut cost = 0.0;
    let mut x = x0.clone();
    for (t, phi) in truth.iter().enumerate() {
        let u = -(&gains.k * &x) - &gains.m * &tails[t];
        cost += quad(&gains.q, &x) + quad(&gains.r, &u);
        let next = &gains.a * &x + &gains.b * &u + phi;
        states.push(x);
        actions.push(u);
        x = next;
    }
    cost += quad(&gains.p, &x);
    states.push(x);
    ClairvoyantSolution {
        states,
        actions,
        cost,
    }
}

fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// `||v||^2_H`.
pub fn h_norm_sq(gains: &LqcGains, v: &DVector<f64>) -> f64 {
    quad(&gains.h, v)
}

/// Hindsight regret witness: `J(pi) - J* = sum_t ||psi_t||^2_H` with
/// `psi_t = sum_j (F')^j P phi^comb_{t+j|t} - w_t`.
#[derive(Clone, Debug)]
pub struct RegretWitness {
    pub psi: Vec<DVector<f64>>,
    pub contributions: Vec<f64>,
    pub total: f64,
}

/// Build the witness for the executed per-step combined parameters
/// (`combined[t][j] = phi^{lambda_t}_{t+j|t}`).
pub fn regret_witness(
    gains: &LqcGains,
    combined: &[Vec<DVector<f64>>],
    truth: &[DVector<f64>],
) -> RegretWitness {
    let tails = clairvoyant_tail_sums(gains, truth);
    let mut psi = Vec::with_capacity(combined.len());
    let mut contributions = Vec::with_capacity(combined.len());
    let mut total = 0.0;
    for (t, window) in combined.iter().enumerate() {
        let p = weighted_param_sum(gains, window) - &tails[t];
        let c = h_norm_sq(gains, &p);
        contributions.push(c);
        total += c;
        psi.push(p);
    }
    RegretWitness {
        psi,
        contributions,
        total,
    }
}

/// Outcome of checking the exact regret identity on one unconstrained run.
#[derive(Clone, Debug)]
pub struct RegretIdentity {
    pub witness: RegretWitness,
    pub j_pi: f64,
    pub j_star: f64,
    pub relative_residual: f64,
}

/// Simulate the fixed-`lambda` confident controller (zero nominals) on the
/// unconstrained plant and compare `J(pi_lambda) - J*` against the witness
/// sum.
pub fn regret_identity_check(
    gains: &LqcGains,
    lambda: f64,
    predictions: &[Vec<DVector<f64>>],
    truth: &[DVector<f64>],
    x0: &DVector<f64>,
) -> RegretIdentity {
    let horizon = truth.len();
    assert_eq!(predictions.len(), horizon);
    let mut combined = Vec::with_capacity(horizon);
    for window in predictions {
        combined.push(window.iter().map(|p| p * lambda).collect::<Vec<_>>());
    }

    let mut x = x0.clone();
    let mut j_pi = 0.0;
    for t in 0..horizon {
        let u = receding_action(gains, &x, &combined[t]);
        j_pi += quad(&gains.q, &x) + quad(&gains.r, &u);
        x = &gains.a * &x + &gains.b * &u + &truth[t];
    }
    j_pi += quad(&gains.p, &x);

    let j_star = clairvoyant_optimal(gains, x0, truth).cost;
    let witness = regret_witness(gains, &combined, truth);
    let gap = j_pi - j_star;
    let denom = f64::max(f64::max(gap.abs(), witness.total.abs()), 1e-12);
    let relative_residual = (gap - witness.total).abs() / denom;
    RegretIdentity {
        witness,
        j_pi,
        j_star,
        relative_residual,
    }
}

/// Lower bound on the clairvoyant cost:
/// `J* >= C_0 sum_t (sum_{tau>=t} rho_F^{tau-t} ||phi*_tau||)^2`.
pub fn j_star_lower_bound(gains: &LqcGains, truth: &[DVector<f64>]) -> f64 {
    let (lam_p, _) = sym_eig_range(&gains.p);
    let (lam_q, _) = sym_eig_range(&gains.q);
    let (lam_r, _) = sym_eig_range(&gains.r);
    let norm_a = operator_norm(&gains.a);
    let norm_b = operator_norm(&gains.b);
    let c0 = crate::math::powi(1.0 - gains.rho_f, 2) / 2.0
        * f64::min(
            lam_p,
            f64::min(lam_r / norm_b, lam_q / f64::max(2.0, norm_a)),
        );
    let mut acc = 0.0;
    let mut tail = 0.0;
    for phi in truth.iter().rev() {
        tail = phi.norm() + gains.rho_f * tail;
        acc += tail * tail;
    }
    c0 * acc
}

/// Number of steps with a nonzero true disturbance (exact zero test).
pub fn adversity(truth: &[DVector<f64>]) -> usize {
    truth.iter().filter(|phi| phi.norm() > 0.0).count()
}
