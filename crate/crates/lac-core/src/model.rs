//! Plants, uncertainty sets, prediction streams, and the two benchmark
//! systems (linear-quadratic tracking and the 1-D robot arm).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::lqc::{self, LqcGains};
use crate::math;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("u_max must be positive, got {0}")]
    NonPositiveInputBound(f64),
    #[error("prediction bundle shape mismatch at t={t}: expected {expected} entries, got {got}")]
    BundleShape { t: usize, expected: usize, got: usize },
    #[error(transparent)]
    Lqc(#[from] lqc::LqcError),
}

/// Convex uncertainty set containing the origin.
#[derive(Clone, Debug)]
pub enum UncertaintySet {
    /// Euclidean ball of the given radius centered at 0 (diameter `2 * radius`).
    Ball { radius: f64 },
    /// Axis-aligned box `[-half_widths, half_widths]`.
    Box { half_widths: DVector<f64> },
}

impl UncertaintySet {
    pub fn diameter(&self) -> f64 {
        match self {
            UncertaintySet::Ball { radius } => 2.0 * radius,
            UncertaintySet::Box { half_widths } => 2.0 * half_widths.norm(),
        }
    }

    pub fn contains(&self, phi: &DVector<f64>, tol: f64) -> bool {
        match self {
            UncertaintySet::Ball { radius } => phi.norm() <= radius + tol,
            UncertaintySet::Box { half_widths } => phi
                .iter()
                .zip(half_widths.iter())
                .all(|(v, h)| math::abs(*v) <= h + tol),
        }
    }

    /// Euclidean projection onto the set. Idempotent; the identity inside.
    pub fn project(&self, phi: &DVector<f64>) -> DVector<f64> {
        match self {
            UncertaintySet::Ball { radius } => {
                let n = phi.norm();
                if n <= *radius {
                    phi.clone()
                } else {
                    phi * (*radius / n)
                }
            }
            UncertaintySet::Box { half_widths } => DVector::from_fn(phi.len(), |i, _| {
                phi[i].clamp(-half_widths[i], half_widths[i])
            }),
        }
    }
}

/// Euclidean projection of a parameter vector onto the uncertainty set.
pub fn project_param(phi: &DVector<f64>, set: &UncertaintySet) -> DVector<f64> {
    set.project(phi)
}

/// Per-coordinate interval bounds for states or inputs.
#[derive(Clone, Debug)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        BoxBounds {
            lower: DVector::from_element(dim, -half_width),
            upper: DVector::from_element(dim, half_width),
        }
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| v[i].clamp(self.lower[i], self.upper[i]))
    }

    /// Largest positive exceedance over all coordinates (0 when inside).
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        let mut worst = 0.0;
        for i in 0..v.len() {
            worst = f64::max(worst, v[i] - self.upper[i]);
            worst = f64::max(worst, self.lower[i] - v[i]);
        }
        worst
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.violation(v) <= tol
    }
}

/// Deterministic transition map `x' = f_t(x, u; phi)`.
#[derive(Clone, Debug)]
pub enum Dynamics {
    /// `x' = A x + B u + phi` with the parameter acting as an additive disturbance.
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
    /// 1-D arm: `x' = x + c2 sin(x) + c3 u exp(-|x|) + phi`.
    RobotArm { c2: f64, c3: f64 },
}

/// The plant: dynamics, quadratic costs, constraint boxes, and the
/// uncertainty set the parameters live in. Immutable after construction.
#[derive(Clone, Debug)]
pub struct SystemModel {
    pub state_dim: usize,
    pub input_dim: usize,
    pub param_dim: usize,
    pub horizon: usize,
    pub dynamics: Dynamics,
    /// Stage cost `x' Q x + u' R u`.
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Terminal cost `x' P x`.
    pub terminal: DMatrix<f64>,
    pub state_box: Option<BoxBounds>,
    pub input_box: Option<BoxBounds>,
    pub uncertainty: UncertaintySet,
}

impl SystemModel {
    /// One deterministic step of the true dynamics.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        match &self.dynamics {
            Dynamics::Linear { a, b } => a * x + b * u + phi,
            Dynamics::RobotArm { c2, c3 } => {
                let xv = x[0];
                DVector::from_element(
                    1,
                    xv + c2 * math::sin(xv) + c3 * u[0] * math::exp(-math::abs(xv)) + phi[0],
                )
            }
        }
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.terminal * x)[(0, 0)]
    }

    /// Path constraint `h_t(x, u; phi) <= 0`. Both benchmark systems only
    /// constrain through the state/input boxes, so the vector is empty.
    pub fn path_constraint(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _phi: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::zeros(0)
    }

    /// Jacobians of the dynamics with respect to state and input.
    ///
    /// The arm's `|x|` kink uses the subgradient `sign(0) = 0`.
    pub fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.dynamics {
            Dynamics::Linear { a, b } => (a.clone(), b.clone()),
            Dynamics::RobotArm { c2, c3 } => {
                let xv = x[0];
                let sign = if xv > 0.0 {
                    1.0
                } else if xv < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let att = math::exp(-math::abs(xv));
                let fx = 1.0 + c2 * math::cos(xv) - c3 * u[0] * sign * att;
                let fu = c3 * att;
                (
                    DMatrix::from_element(1, 1, fx),
                    DMatrix::from_element(1, 1, fu),
                )
            }
        }
    }

    /// Replace the uncertainty set (used once at scenario ingestion, before
    /// the model is shared with simulation workers).
    pub fn with_uncertainty(mut self, set: UncertaintySet) -> Self {
        self.uncertainty = set;
        self
    }
}

/// Receding-horizon prediction streams: the true parameters, and for every
/// step `t` the predicted and nominal windows `phi_{t:t_bar|t}`.
#[derive(Clone, Debug)]
pub struct PredictionBundle {
    pub truth: Vec<DVector<f64>>,
    pub predictions: Vec<Vec<DVector<f64>>>,
    pub nominals: Vec<Vec<DVector<f64>>>,
    pub window: usize,
}

/// Window end `t_bar = min(t + k - 1, T - 1)` (inclusive).
pub fn window_end(t: usize, k: usize, horizon: usize) -> usize {
    usize::min(t + k - 1, horizon - 1)
}

impl PredictionBundle {
    pub fn new(
        truth: Vec<DVector<f64>>,
        predictions: Vec<Vec<DVector<f64>>>,
        nominals: Vec<Vec<DVector<f64>>>,
        window: usize,
    ) -> Result<Self, ModelError> {
        let horizon = truth.len();
        if horizon == 0 || window == 0 {
            return Err(ModelError::EmptyHorizon);
        }
        for t in 0..horizon {
            let expected = window_end(t, window, horizon) - t + 1;
            for (name, stream) in [("predictions", &predictions), ("nominals", &nominals)] {
                let got = stream.get(t).map(Vec::len).unwrap_or(0);
                if got != expected {
                    let _ = name;
                    return Err(ModelError::BundleShape { t, expected, got });
                }
            }
        }
        Ok(PredictionBundle {
            truth,
            predictions,
            nominals,
            window,
        })
    }

    pub fn horizon(&self) -> usize {
        self.truth.len()
    }

    /// Project every predicted and nominal entry into the uncertainty set.
    pub fn project_into(&mut self, set: &UncertaintySet) {
        for stream in [&mut self.predictions, &mut self.nominals] {
            for window in stream.iter_mut() {
                for entry in window.iter_mut() {
                    *entry = set.project(entry);
                }
            }
        }
    }

    /// Largest parameter norm over truth and both streams. Scenario gamma
    /// policies scale the uncertainty set from this.
    pub fn max_norm(&self) -> f64 {
        let mut m = 0.0;
        for v in &self.truth {
            m = f64::max(m, v.norm());
        }
        for stream in [&self.predictions, &self.nominals] {
            for window in stream {
                for v in window {
                    m = f64::max(m, v.norm());
                }
            }
        }
        m
    }

    pub fn max_truth_norm(&self) -> f64 {
        self.truth.iter().fold(0.0, |m, v| f64::max(m, v.norm()))
    }

    /// Everything a policy may observe at step `t`: the current prediction
    /// and nominal windows plus the truth revealed so far.
    pub fn step_view(&self, t: usize) -> StepView<'_> {
        StepView {
            t,
            predictions: &self.predictions[t],
            nominals: &self.nominals[t],
            truth: RevealedTruth {
                data: &self.truth,
                limit: t,
            },
        }
    }
}

/// Access guard over the true parameters: at step `t` only indices `< t`
/// are readable. Reading further is a programming error and panics.
#[derive(Clone, Copy)]
pub struct RevealedTruth<'a> {
    data: &'a [DVector<f64>],
    limit: usize,
}

impl<'a> RevealedTruth<'a> {
    pub fn get(&self, idx: usize) -> &'a DVector<f64> {
        assert!(
            idx < self.limit,
            "reveal violation: truth index {idx} queried at step {}",
            self.limit
        );
        &self.data[idx]
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

/// Per-step observation surface handed to policies.
pub struct StepView<'a> {
    pub t: usize,
    pub predictions: &'a [DVector<f64>],
    pub nominals: &'a [DVector<f64>],
    pub truth: RevealedTruth<'a>,
}

/// Reference point of the hypotrochoid tracked in the linear experiments.
pub fn hypotrochoid(t: f64) -> (f64, f64) {
    (
        math::cos(t / 10.0) / 2.0 + math::cos(t / 2.0),
        math::sin(t / 10.0) / 2.0 + math::sin(t / 2.0),
    )
}

/// The 4-state tracking plant plus its gains and true disturbance stream.
#[derive(Clone, Debug)]
pub struct LqcTrackingSystem {
    pub model: SystemModel,
    pub gains: LqcGains,
    pub truth: Vec<DVector<f64>>,
}

/// Build the hypotrochoid-tracking LQC system. The state is
/// `[z; v] = [p - y; v]`; the reference enters as the disturbance
/// `phi*_t = [y_t - y_{t+1}; 0; 0]` of the lifted error coordinates.
///
/// `u_max = None` gives the unconstrained variant used by the regret
/// identities; the experiments clamp inputs to `|u| <= u_max`.
pub fn make_lqc_tracking_system(
    c1: f64,
    u_max: Option<f64>,
    horizon: usize,
) -> Result<LqcTrackingSystem, ModelError> {
    if horizon == 0 {
        return Err(ModelError::EmptyHorizon);
    }
    if let Some(um) = u_max {
        if um <= 0.0 {
            return Err(ModelError::NonPositiveInputBound(um));
        }
    }
    let mut a = DMatrix::identity(4, 4);
    a[(0, 2)] = c1;
    a[(1, 3)] = c1;
    let mut b = DMatrix::zeros(4, 2);
    b[(2, 0)] = c1;
    b[(3, 1)] = c1;
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
    let r = DMatrix::identity(2, 2);

    let gains = lqc::solve_dare(&a, &b, &q, &r, horizon)?;

    let truth: Vec<DVector<f64>> = (0..horizon)
        .map(|t| {
            let (y0x, y0y) = hypotrochoid(t as f64);
            let (y1x, y1y) = hypotrochoid((t + 1) as f64);
            DVector::from_vec(vec![y0x - y1x, y0y - y1y, 0.0, 0.0])
        })
        .collect();
    let max_truth = truth.iter().fold(0.0, |m: f64, v| m.max(v.norm()));

    let model = SystemModel {
        state_dim: 4,
        input_dim: 2,
        param_dim: 4,
        horizon,
        dynamics: Dynamics::Linear {
            a: a.clone(),
            b: b.clone(),
        },
        q,
        r,
        terminal: gains.p.clone(),
        state_box: None,
        input_box: u_max.map(|um| BoxBounds::symmetric(2, um)),
        uncertainty: UncertaintySet::Ball {
            radius: f64::max(max_truth, 1e-6),
        },
    };
    Ok(LqcTrackingSystem {
        model,
        gains,
        truth,
    })
}

/// The 1-D nonlinear arm with stage cost `x^2 + c4 u^2`, terminal cost
/// `x^2`, state box `|x| <= 0.2`, and input box `|u| <= 1000`.
pub fn make_robot_arm_system(
    c2: f64,
    c3: f64,
    c4: f64,
    horizon: usize,
) -> Result<SystemModel, ModelError> {
    if horizon == 0 {
        return Err(ModelError::EmptyHorizon);
    }
    Ok(SystemModel {
        state_dim: 1,
        input_dim: 1,
        param_dim: 1,
        horizon,
        dynamics: Dynamics::RobotArm { c2, c3 },
        q: DMatrix::from_element(1, 1, 1.0),
        r: DMatrix::from_element(1, 1, c4),
        terminal: DMatrix::from_element(1, 1, 1.0),
        state_box: Some(BoxBounds::symmetric(1, 0.2)),
        input_box: Some(BoxBounds::symmetric(1, 1e3)),
        uncertainty: UncertaintySet::Ball { radius: 0.1 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hypotrochoid_start() {
        let (x, y) = hypotrochoid(0.0);
        assert_abs_diff_eq!(x, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lqc_truth_matches_reference_difference() {
        let sys = make_lqc_tracking_system(0.7, None, 5).unwrap();
        let (y0x, y0y) = hypotrochoid(0.0);
        let (y1x, y1y) = hypotrochoid(1.0);
        assert_abs_diff_eq!(sys.truth[0][0], y0x - y1x, epsilon = 1e-15);
        assert_abs_diff_eq!(sys.truth[0][1], y0y - y1y, epsilon = 1e-15);
        assert_eq!(sys.truth[0][2], 0.0);
        assert_eq!(sys.truth[0][3], 0.0);
    }

    #[test]
    fn constant_reference_gives_zero_disturbance() {
        // phi*_t = [y_t - y_{t+1}; 0; 0] vanishes when the reference is constant.
        let y = DVector::from_vec(vec![0.3, -0.4]);
        let phi = DVector::from_vec(vec![y[0] - y[0], y[1] - y[1], 0.0, 0.0]);
        assert_eq!(phi.norm(), 0.0);
    }

    #[test]
    fn lifted_reference_consistency() {
        // Raw kinematics p' = p + c1 v, v' = v + c1 u must match the
        // error-coordinate model driven by phi*_t, i.e. z_t = p_t - y_t.
        let c1 = 0.2;
        let horizon = 60;
        let sys = make_lqc_tracking_system(c1, None, horizon).unwrap();
        let mut rng = crate::noise::substream(3, "consistency", 0);
        let mut p = DVector::from_vec(vec![1.5, 0.0]);
        let mut v = DVector::from_vec(vec![0.1, -0.2]);
        let (y0x, y0y) = hypotrochoid(0.0);
        let mut x = DVector::from_vec(vec![p[0] - y0x, p[1] - y0y, v[0], v[1]]);
        for t in 0..horizon {
            let u = DVector::from_vec(vec![
                crate::noise::standard_normal(&mut rng),
                crate::noise::standard_normal(&mut rng),
            ]);
            x = sys.model.step(&x, &u, &sys.truth[t]);
            let pn = &p + c1 * &v;
            let vn = &v + c1 * &u;
            p = pn;
            v = vn;
            let (yx, yy) = hypotrochoid((t + 1) as f64);
            assert_abs_diff_eq!(x[0], p[0] - yx, epsilon = 1e-12);
            assert_abs_diff_eq!(x[1], p[1] - yy, epsilon = 1e-12);
            assert_abs_diff_eq!(x[2], v[0], epsilon = 1e-12);
            assert_abs_diff_eq!(x[3], v[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn robot_arm_dynamics_values() {
        let sys = make_robot_arm_system(0.5, 0.2, 0.1, 10).unwrap();
        let z = DVector::from_element(1, 0.0);
        let f0 = sys.step(&z, &z, &z);
        assert_eq!(f0[0], 0.0);
        let f1 = sys.step(&z, &DVector::from_element(1, 1.0), &z);
        assert_abs_diff_eq!(f1[0], 0.2, epsilon = 1e-15);
        let f2 = sys.step(&DVector::from_element(1, 0.1), &z, &z);
        assert_abs_diff_eq!(f2[0], 0.1 + 0.5 * (0.1f64).sin(), epsilon = 1e-12);
    }

    #[test]
    fn projection_cases() {
        let ball = UncertaintySet::Ball { radius: 1.0 };
        let inside = DVector::from_vec(vec![0.3, 0.1]);
        assert_eq!(project_param(&inside, &ball), inside);
        let out = DVector::from_vec(vec![2.0, 0.0]);
        let proj = project_param(&out, &ball);
        assert_abs_diff_eq!(proj[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(proj[1], 0.0, epsilon = 1e-15);
        assert_eq!(ball.project(&proj), proj);

        let bx = UncertaintySet::Box {
            half_widths: DVector::from_vec(vec![1.0, 1.0]),
        };
        let clamped = project_param(&DVector::from_vec(vec![2.0, -3.0]), &bx);
        assert_eq!(clamped, DVector::from_vec(vec![1.0, -1.0]));
    }

    #[test]
    fn convex_combination_stays_in_set() {
        let ball = UncertaintySet::Ball { radius: 0.8 };
        let mut rng = crate::noise::substream(11, "convexity", 0);
        for _ in 0..200 {
            let mut a = DVector::from_fn(3, |_, _| crate::noise::standard_normal(&mut rng));
            let mut b = DVector::from_fn(3, |_, _| crate::noise::standard_normal(&mut rng));
            a = ball.project(&a);
            b = ball.project(&b);
            let lam = crate::noise::uniform(&mut rng);
            let mix = &a * lam + &b * (1.0 - lam);
            assert!(ball.contains(&mix, 1e-12));
        }
    }

    #[test]
    #[should_panic(expected = "reveal violation")]
    fn reveal_guard_trips() {
        let truth = vec![DVector::zeros(1); 4];
        let preds = (0..4)
            .map(|t| vec![DVector::zeros(1); window_end(t, 2, 4) - t + 1])
            .collect::<Vec<_>>();
        let bundle = PredictionBundle::new(truth, preds.clone(), preds, 2).unwrap();
        let view = bundle.step_view(2);
        let _ok = view.truth.get(1);
        let _bad = view.truth.get(2);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_lqc_tracking_system(0.2, Some(0.0), 10).is_err());
        assert!(make_lqc_tracking_system(0.2, None, 0).is_err());
    }
}
