//! Online confidence learning: the surrogate loss, its gradient, delayed
//! projected-gradient updates, the follow-the-leader self-tuning variant,
//! and the hindsight minimizers (`lambda*`, `varpi`).

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::math;

#[derive(Debug, thiserror::Error)]
pub enum ConfidenceError {
    #[error("out-of-order feedback: expected loss index {expected}, got {got}")]
    OutOfOrderFeedback { expected: usize, got: usize },
}

/// Surrogate loss for one step: a squared weight-decayed sum of norms of the
/// convex combination of prediction and nominal errors over the window.
#[derive(Clone, Debug)]
pub struct SurrogateLoss {
    /// Decay weights `rho(0..window)`, nonincreasing after enveloping.
    pub weights: Vec<f64>,
    /// `eps_j = phi*_{t+j} - phi_{t+j|t}`.
    pub pred_err: Vec<DVector<f64>>,
    /// `eps_bar_j = phi*_{t+j} - kappa_{t+j|t}`.
    pub nominal_err: Vec<DVector<f64>>,
}

impl SurrogateLoss {
    pub fn new(
        weights: Vec<f64>,
        pred_err: Vec<DVector<f64>>,
        nominal_err: Vec<DVector<f64>>,
    ) -> Self {
        assert_eq!(weights.len(), pred_err.len());
        assert_eq!(pred_err.len(), nominal_err.len());
        SurrogateLoss {
            weights,
            pred_err,
            nominal_err,
        }
    }

    /// `xi_t(lambda) = (sum_j rho_j ||lambda eps_j + (1-lambda) eps_bar_j||)^2`.
    pub fn xi(&self, lambda: f64) -> f64 {
        let mut s = 0.0;
        for j in 0..self.weights.len() {
            let v = &self.nominal_err[j] + (&self.pred_err[j] - &self.nominal_err[j]) * lambda;
            s += self.weights[j] * v.norm();
        }
        s * s
    }

    /// Weighted least-squares surrogate
    /// `sum_j rho_j ||lambda eps_j + (1-lambda) eps_bar_j||^2`, the form the
    /// linear-quadratic analysis feeds to the delayed learner.
    pub fn least_squares(&self, lambda: f64) -> f64 {
        let mut s = 0.0;
        for j in 0..self.weights.len() {
            let v = &self.nominal_err[j] + (&self.pred_err[j] - &self.nominal_err[j]) * lambda;
            s += self.weights[j] * v.norm_squared();
        }
        s
    }

    /// Derivative of [`Self::least_squares`].
    pub fn grad_least_squares(&self, lambda: f64) -> f64 {
        let mut d = 0.0;
        for j in 0..self.weights.len() {
            let dir = &self.pred_err[j] - &self.nominal_err[j];
            let v = &self.nominal_err[j] + &dir * lambda;
            d += 2.0 * self.weights[j] * v.dot(&dir);
        }
        d
    }

    /// Closed-form minimizer of [`Self::least_squares`] over the reals,
    /// or `None` when the loss does not depend on `lambda`.
    pub fn least_squares_minimizer(&self) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.weights.len() {
            let dir = &self.pred_err[j] - &self.nominal_err[j];
            num += self.weights[j] * self.nominal_err[j].dot(&(-&dir));
            den += self.weights[j] * dir.norm_squared();
        }
        (den > 0.0).then(|| num / den)
    }

    /// Analytic derivative of [`Self::xi`]; zero-norm terms contribute 0
    /// (a valid subgradient at the kink).
    pub fn grad(&self, lambda: f64) -> f64 {
        let mut s = 0.0;
        let mut d = 0.0;
        for j in 0..self.weights.len() {
            let dir = &self.pred_err[j] - &self.nominal_err[j];
            let v = &self.nominal_err[j] + &dir * lambda;
            let n = v.norm();
            s += self.weights[j] * n;
            if n > 0.0 {
                d += self.weights[j] * v.dot(&dir) / n;
            }
        }
        2.0 * s * d
    }
}

/// Build per-step losses from the raw streams over the full prediction
/// windows (shrinking near the horizon end), truncating `weights` to each
/// window length.
pub fn build_losses(
    truth: &[DVector<f64>],
    predictions: &[Vec<DVector<f64>>],
    nominals: &[Vec<DVector<f64>>],
    weights: &[f64],
) -> Vec<SurrogateLoss> {
    let horizon = truth.len();
    let mut losses = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let len = predictions[t].len();
        let mut pred_err = Vec::with_capacity(len);
        let mut nominal_err = Vec::with_capacity(len);
        for j in 0..len {
            pred_err.push(&truth[t + j] - &predictions[t][j]);
            nominal_err.push(&truth[t + j] - &nominals[t][j]);
        }
        let w = weights.iter().copied().take(len).collect();
        losses.push(SurrogateLoss::new(w, pred_err, nominal_err));
    }
    losses
}

/// Nonincreasing upper envelope `rho_hat(j) = max_{i >= j} rho(i)`.
pub fn monotone_envelope(rho: &[f64]) -> Vec<f64> {
    let mut out = rho.to_vec();
    for j in (0..out.len().saturating_sub(1)).rev() {
        out[j] = f64::max(out[j], out[j + 1]);
    }
    out
}

/// Theory-mode step size `1/(2 G sqrt(T/k + 1))` for the subroutine regret
/// bound, with `G = 2 C^2 gamma^2` the gradient bound.
pub fn theory_step_size(c: f64, gamma: f64, horizon: usize, delay: usize) -> f64 {
    let g = 2.0 * c * c * gamma * gamma;
    let n = horizon as f64 / delay as f64 + 1.0;
    1.0 / (2.0 * g * math::sqrt(n))
}

/// How one delayed update is computed from the scored loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    /// `lambda - beta * grad` on the squared weighted sum of norms
    /// ([`SurrogateLoss::xi`]).
    SquaredNormSum,
    /// `lambda - beta * grad` on the weighted least-squares surrogate
    /// ([`SurrogateLoss::least_squares`]), the form the linear-quadratic
    /// analysis runs the learner on.
    LeastSquares,
    /// Projected gradient on the least-squares surrogate with the step
    /// normalized by its curvature `2 sum_j w_j ||eps_j - eps_bar_j||^2`:
    /// one damped Newton step toward the per-window minimizer. The rate is
    /// then invariant to the error scale, so one damping serves a whole
    /// sweep.
    DampedNewton { damping: f64 },
}

/// Delayed projected-gradient state: `lambda_t` is produced from
/// `lambda_{t-k}` and the loss at index `t-k`, realizing `k` interleaved
/// projected-gradient subroutines.
#[derive(Clone, Debug)]
pub struct ConfidenceState {
    lambdas: Vec<f64>,
    pub delay: usize,
    pub step_size: f64,
    pub rule: UpdateRule,
    consumed: usize,
}

impl ConfidenceState {
    /// Seed the first `delay` confidence values with `init`.
    pub fn new(delay: usize, step_size: f64, init: f64) -> Self {
        Self::with_rule(delay, step_size, init, UpdateRule::SquaredNormSum)
    }

    pub fn with_rule(delay: usize, step_size: f64, init: f64, rule: UpdateRule) -> Self {
        assert!(delay >= 1);
        ConfidenceState {
            lambdas: alloc::vec![init.clamp(0.0, 1.0); delay],
            delay,
            step_size,
            rule,
            consumed: 0,
        }
    }

    /// Consume the loss at `loss_index = t - k` and emit
    /// `lambda_t = clamp(lambda_{t-k} - beta grad xi_{t-k}(lambda_{t-k}))`.
    pub fn dcl_step(
        &mut self,
        loss_index: usize,
        loss: &SurrogateLoss,
    ) -> Result<f64, ConfidenceError> {
        if loss_index != self.consumed {
            return Err(ConfidenceError::OutOfOrderFeedback {
                expected: self.consumed,
                got: loss_index,
            });
        }
        let base = self.lambdas[loss_index];
        let next = match self.rule {
            UpdateRule::SquaredNormSum => base - self.step_size * loss.grad(base),
            UpdateRule::LeastSquares => base - self.step_size * loss.grad_least_squares(base),
            UpdateRule::DampedNewton { damping } => match loss.least_squares_minimizer() {
                Some(target) => base + damping * (target.clamp(0.0, 1.0) - base),
                None => base,
            },
        };
        let next = next.clamp(0.0, 1.0);
        self.lambdas.push(next);
        self.consumed += 1;
        Ok(next)
    }

    /// Confidence used at step `t` (initialization for `t < delay`).
    pub fn lambda_at(&self, t: usize) -> f64 {
        self.lambdas[t]
    }

    pub fn history(&self) -> &[f64] {
        &self.lambdas
    }
}

/// Follow-the-leader self-tuning: the running closed-form minimizer of
/// `sum ||lambda eps + (1-lambda) eps_bar||^2` over fully revealed pairs.
#[derive(Clone, Debug)]
pub struct SelfTuningState {
    num: f64,
    den: f64,
    lambda: f64,
}

impl SelfTuningState {
    pub fn new(init: f64) -> Self {
        SelfTuningState {
            num: 0.0,
            den: 0.0,
            lambda: init.clamp(0.0, 1.0),
        }
    }

    /// Fold one revealed `(eps, eps_bar)` pair into the running sums.
    pub fn observe(&mut self, pred_err: &DVector<f64>, nominal_err: &DVector<f64>) {
        let dir = pred_err - nominal_err;
        self.num += nominal_err.dot(&(nominal_err - pred_err));
        self.den += dir.norm_squared();
    }

    /// Current `lambda`: `clamp(num/den)` or the previous value when the
    /// history is uninformative.
    pub fn current(&mut self) -> f64 {
        if self.den > 0.0 {
            self.lambda = (self.num / self.den).clamp(0.0, 1.0);
        }
        self.lambda
    }
}

/// Hindsight minimizer of `sum_t xi_t(lambda)` over `[0, 1]` by golden
/// section (the objective is convex in `lambda`).
pub fn lambda_star(losses: &[SurrogateLoss]) -> (f64, f64) {
    let total = |lam: f64| losses.iter().map(|l| l.xi(lam)).sum::<f64>();
    let inv_phi = (math::sqrt(5.0) - 1.0) / 2.0;
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = total(x1);
    let mut f2 = total(x2);
    while hi - lo > 1e-6 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = total(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = total(x2);
        }
    }
    let mid = (lo + hi) / 2.0;
    // Interior search can miss an endpoint minimum by the bracket width.
    let cands = [0.0, mid, 1.0];
    let mut best = (mid, total(mid));
    for c in cands {
        let v = total(c);
        if v < best.1 {
            best = (c, v);
        }
    }
    best
}

/// Gram-determinant least-squares residual
/// `(||e||^2 ||b||^2 - <e, b>^2) / ||e - b||^2`, the minimum of
/// `||lambda e + (1 - lambda) b||^2` over real `lambda`.
///
/// Returns the value and a degeneracy flag: when `e == b` exactly the line
/// collapses and the value is defined as 0.
pub fn varpi_gram(e: &DVector<f64>, b: &DVector<f64>) -> (f64, bool) {
    let diff = e - b;
    let denom = diff.norm_squared();
    if denom == 0.0 {
        return (0.0, true);
    }
    let num = e.norm_squared() * b.norm_squared() - e.dot(b) * e.dot(b);
    (f64::max(num / denom, 0.0), false)
}

/// `rho`-weighted best combined error
/// `||eps||^2_rho ||eps_bar||^2_rho / (||eps||^2_rho + ||eps_bar||^2_rho)`;
/// 0 when both streams vanish.
pub fn varpi_rho(losses: &[SurrogateLoss]) -> f64 {
    let eps_sq: f64 = losses.iter().map(|l| l.xi(1.0)).sum();
    let bar_sq: f64 = losses.iter().map(|l| l.xi(0.0)).sum();
    if eps_sq + bar_sq == 0.0 {
        0.0
    } else {
        eps_sq * bar_sq / (eps_sq + bar_sq)
    }
}

/// Stack windowed per-step vectors into one long vector (window-major).
pub fn stack_windows(stream: &[Vec<DVector<f64>>]) -> DVector<f64> {
    let total: usize = stream.iter().map(|w| w.iter().map(DVector::len).sum::<usize>()).sum();
    let mut out = DVector::zeros(total);
    let mut at = 0;
    for window in stream {
        for v in window {
            out.rows_mut(at, v.len()).copy_from(v);
            at += v.len();
        }
    }
    out
}

/// Measured DCL regret against the hindsight optimum, with the
/// `4 C^2 gamma^2 sqrt(Tk + k^2)` bound it must stay under.
#[derive(Clone, Debug)]
pub struct DclRegret {
    pub regret: f64,
    pub bound: f64,
    pub lambda_star: f64,
    pub optimal_value: f64,
}

pub fn dcl_regret(
    losses: &[SurrogateLoss],
    lambdas: &[f64],
    c: f64,
    gamma: f64,
    delay: usize,
) -> DclRegret {
    assert!(lambdas.len() >= losses.len());
    let incurred: f64 = losses
        .iter()
        .enumerate()
        .map(|(t, l)| l.xi(lambdas[t]))
        .sum();
    let (ls, optimal_value) = lambda_star(losses);
    let horizon = losses.len() as f64;
    let k = delay as f64;
    let bound = 4.0 * c * c * gamma * gamma * math::sqrt(horizon * k + k * k);
    DclRegret {
        regret: incurred - optimal_value,
        bound,
        lambda_star: ls,
        optimal_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise;
    use approx::assert_abs_diff_eq;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(alloc::vec![a, b])
    }

    fn random_loss(rng: &mut rand_chacha::ChaCha8Rng, window: usize, dim: usize) -> SurrogateLoss {
        let weights = (0..window)
            .map(|j| 1.0 + 0.5 * noise::uniform(rng) - 0.1 * j as f64)
            .collect::<Vec<_>>();
        let pred_err = (0..window)
            .map(|_| DVector::from_fn(dim, |_, _| noise::standard_normal(rng)))
            .collect();
        let nominal_err = (0..window)
            .map(|_| DVector::from_fn(dim, |_, _| noise::standard_normal(rng)))
            .collect();
        SurrogateLoss::new(monotone_envelope(&weights), pred_err, nominal_err)
    }

    #[test]
    fn xi_hand_example() {
        let loss = SurrogateLoss::new(
            alloc::vec![1.0, 0.5],
            alloc::vec![v2(1.0, 0.0), v2(0.0, 1.0)],
            alloc::vec![v2(0.0, 0.0), v2(0.0, 0.0)],
        );
        assert_abs_diff_eq!(loss.xi(0.5), 0.5625, epsilon = 1e-15);
        // lambda = 1 collapses to the weighted prediction-error norm sum.
        assert_abs_diff_eq!(loss.xi(1.0), (1.0 + 0.5) * (1.0 + 0.5), epsilon = 1e-15);
        // Zero errors: zero loss.
        let zero = SurrogateLoss::new(
            alloc::vec![1.0],
            alloc::vec![v2(0.0, 0.0)],
            alloc::vec![v2(0.0, 0.0)],
        );
        assert_eq!(zero.xi(0.3), 0.0);
        assert_eq!(zero.grad(0.3), 0.0);
    }

    #[test]
    fn grad_matches_central_difference() {
        let mut rng = noise::substream(5, "xi-grad", 0);
        for _ in 0..200 {
            let loss = random_loss(&mut rng, 4, 3);
            let lam = noise::uniform(&mut rng);
            let h = 1e-6;
            let fd = (loss.xi((lam + h).min(1.0)) - loss.xi((lam - h).max(0.0)))
                / ((lam + h).min(1.0) - (lam - h).max(0.0));
            let g = loss.grad(lam);
            let denom = f64::max(1.0, g.abs());
            assert!(
                (g - fd).abs() / denom < 1e-5,
                "grad {g} vs fd {fd} at lambda {lam}"
            );
        }
    }

    #[test]
    fn grad_is_zero_when_streams_agree() {
        let loss = SurrogateLoss::new(
            alloc::vec![1.0, 0.7],
            alloc::vec![v2(0.2, -0.1), v2(0.4, 0.0)],
            alloc::vec![v2(0.2, -0.1), v2(0.4, 0.0)],
        );
        for lam in [0.0, 0.3, 1.0] {
            assert_eq!(loss.grad(lam), 0.0);
        }
    }

    #[test]
    fn gradient_bound_on_ball_instances() {
        // |grad| <= 2 (sum rho)^2 gamma^2 when all errors live in a
        // diameter-gamma ball.
        let mut rng = noise::substream(6, "xi-bound", 0);
        let gamma = 1.6;
        for _ in 0..200 {
            let window = 5;
            let weights = alloc::vec![1.0, 0.9, 0.8, 0.7, 0.6];
            let c: f64 = weights.iter().sum();
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut v = DVector::from_fn(3, |_, _| noise::standard_normal(rng));
                let n = v.norm();
                if n > gamma / 2.0 {
                    v *= gamma / (2.0 * n);
                }
                v
            };
            let pred_err = (0..window).map(|_| draw(&mut rng)).collect::<Vec<_>>();
            let nominal_err = (0..window).map(|_| draw(&mut rng)).collect::<Vec<_>>();
            let loss = SurrogateLoss::new(weights, pred_err, nominal_err);
            let lam = noise::uniform(&mut rng);
            assert!(loss.grad(lam).abs() <= 2.0 * c * c * gamma * gamma + 1e-9);
        }
    }

    #[test]
    fn xi_is_convex_in_lambda() {
        let mut rng = noise::substream(7, "xi-convex", 0);
        for _ in 0..300 {
            let loss = random_loss(&mut rng, 3, 2);
            let l1 = noise::uniform(&mut rng);
            let l2 = noise::uniform(&mut rng);
            let mid = (l1 + l2) / 2.0;
            assert!(loss.xi(mid) <= (loss.xi(l1) + loss.xi(l2)) / 2.0 + 1e-12);
        }
    }

    #[test]
    fn dcl_trivial_updates() {
        let zero_loss = SurrogateLoss::new(
            alloc::vec![1.0],
            alloc::vec![v2(0.0, 0.0)],
            alloc::vec![v2(0.0, 0.0)],
        );
        let mut st = ConfidenceState::new(2, 0.1, 0.4);
        let lam = st.dcl_step(0, &zero_loss).unwrap();
        assert_eq!(lam, 0.4);

        // Clamp arithmetic from the lower endpoint.
        let mut st = ConfidenceState::new(1, 0.1, 0.0);
        let down_loss = SurrogateLoss::new(
            alloc::vec![1.0],
            alloc::vec![v2(0.0, 0.0)],
            alloc::vec![v2(3.0, 0.0)],
        );
        // grad at 0: 2 * ||eps_bar|| * <eps_bar, eps - eps_bar>/||eps_bar|| = -2*9 = -18
        let lam = st.dcl_step(0, &down_loss).unwrap();
        assert_abs_diff_eq!(lam, (0.1f64 * 18.0).min(1.0), epsilon = 1e-12);

        assert!(matches!(
            st.dcl_step(5, &down_loss),
            Err(ConfidenceError::OutOfOrderFeedback { .. })
        ));
    }

    #[test]
    fn dcl_equals_interleaved_subroutines_bitwise() {
        let mut rng = noise::substream(8, "interleave", 0);
        let delay = 3;
        let horizon = 40;
        let losses: Vec<SurrogateLoss> =
            (0..horizon).map(|_| random_loss(&mut rng, 2, 2)).collect();
        let beta = 0.07;
        let init = 0.5;

        let mut st = ConfidenceState::new(delay, beta, init);
        for t in delay..horizon {
            st.dcl_step(t - delay, &losses[t - delay]).unwrap();
        }

        // Independent projected-gradient runs on the index classes T_j.
        for j in 0..delay {
            let mut lam = init;
            let mut t = j;
            while t < horizon {
                assert_eq!(st.lambda_at(t), lam, "class {j} step {t}");
                lam = (lam - beta * losses[t].grad(lam)).clamp(0.0, 1.0);
                t += delay;
            }
        }
    }

    #[test]
    fn self_tuning_closed_form() {
        let mut st = SelfTuningState::new(0.5);
        assert_eq!(st.current(), 0.5);
        // Perfect predictions: lambda -> 1.
        st.observe(&v2(0.0, 0.0), &v2(0.4, 0.1));
        assert_abs_diff_eq!(st.current(), 1.0, epsilon = 1e-12);

        // Truth equals nominal: lambda -> 0.
        let mut st0 = SelfTuningState::new(0.5);
        st0.observe(&v2(0.3, -0.2), &v2(0.0, 0.0));
        assert_abs_diff_eq!(st0.current(), 0.0, epsilon = 1e-12);

        // Mixed history matches a fine grid argmin.
        let mut rng = noise::substream(9, "ftl", 0);
        let mut st = SelfTuningState::new(0.5);
        let mut pairs = Vec::new();
        for _ in 0..30 {
            let e = DVector::from_fn(2, |_, _| noise::standard_normal(&mut rng));
            let b = DVector::from_fn(2, |_, _| noise::standard_normal(&mut rng));
            st.observe(&e, &b);
            pairs.push((e, b));
        }
        let lam = st.current();
        let objective = |l: f64| {
            pairs
                .iter()
                .map(|(e, b)| (e * l + b * (1.0 - l)).norm_squared())
                .sum::<f64>()
        };
        let mut best = (0.0, objective(0.0));
        for i in 1..=10_000 {
            let l = i as f64 / 10_000.0;
            let v = objective(l);
            if v < best.1 {
                best = (l, v);
            }
        }
        assert!((lam - best.0).abs() <= 1e-3, "ftl {lam} vs grid {}", best.0);
    }

    #[test]
    fn lambda_star_cases() {
        // eps = 0: lambda* = 1 with value 0.
        let perfect = alloc::vec![SurrogateLoss::new(
            alloc::vec![1.0],
            alloc::vec![v2(0.0, 0.0)],
            alloc::vec![v2(0.7, 0.1)],
        )];
        let (ls, val) = lambda_star(&perfect);
        assert!(ls > 1.0 - 1e-5);
        assert!(val < 1e-10);

        // eps_bar = 0: lambda* = 0 with value 0.
        let nominal = alloc::vec![SurrogateLoss::new(
            alloc::vec![1.0],
            alloc::vec![v2(0.7, 0.1)],
            alloc::vec![v2(0.0, 0.0)],
        )];
        let (ls, val) = lambda_star(&nominal);
        assert!(ls < 1e-5);
        assert!(val < 1e-10);

        // Per-pair orthogonal errors with equal rho-norms: the least-squares
        // value is the product-over-sum expression.
        let mut losses = Vec::new();
        for t in 0..6 {
            let scale = 0.5 + 0.1 * t as f64;
            losses.push(SurrogateLoss::new(
                alloc::vec![1.3],
                alloc::vec![v2(scale, 0.0)],
                alloc::vec![v2(0.0, scale)],
            ));
        }
        let eps_sq: f64 = losses.iter().map(|l| l.xi(1.0)).sum();
        let bar_sq: f64 = losses.iter().map(|l| l.xi(0.0)).sum();
        let (_, val) = lambda_star(&losses);
        let expect = eps_sq * bar_sq / (eps_sq + bar_sq);
        assert_abs_diff_eq!(val, expect, epsilon = 1e-6 * expect);
        assert_abs_diff_eq!(varpi_rho(&losses), expect, epsilon = 1e-12 * expect);
    }

    #[test]
    fn varpi_gram_cases() {
        // Collinear vectors: zero.
        let e = v2(2.0, 0.0);
        let b = v2(1.0, 0.0);
        let (v, degenerate) = varpi_gram(&e, &b);
        assert!(!degenerate);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);

        // Orthogonal unit vectors: 1/2.
        let (v, _) = varpi_gram(&v2(1.0, 0.0), &v2(0.0, 1.0));
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);

        // Equal vectors: degenerate, defined as 0.
        let (v, degenerate) = varpi_gram(&e, &e);
        assert!(degenerate);
        assert_eq!(v, 0.0);

        // Random vectors match a dense line search of
        // min_lambda ||lambda e + (1 - lambda) b||^2.
        let mut rng = noise::substream(10, "varpi", 0);
        for _ in 0..20 {
            let e = DVector::from_fn(4, |_, _| noise::standard_normal(&mut rng));
            let b = DVector::from_fn(4, |_, _| noise::standard_normal(&mut rng));
            let (v, _) = varpi_gram(&e, &b);
            let mut best = f64::INFINITY;
            for i in 0..=100_000 {
                let l = -5.0 + 10.0 * i as f64 / 100_000.0;
                best = best.min((&e * l + &b * (1.0 - l)).norm_squared());
            }
            assert!((v - best).abs() <= 1e-6 * (1.0 + best), "{v} vs {best}");
        }
    }

    #[test]
    fn dcl_regret_is_zero_for_lambda_independent_losses() {
        // eps == eps_bar makes every loss constant in lambda.
        let losses: Vec<SurrogateLoss> = (0..50)
            .map(|t| {
                let v = v2(0.1 * t as f64, -0.05 * t as f64);
                SurrogateLoss::new(alloc::vec![1.0], alloc::vec![v.clone()], alloc::vec![v])
            })
            .collect();
        let mut st = ConfidenceState::new(5, 0.05, 0.5);
        for t in 5..50 {
            st.dcl_step(t - 5, &losses[t - 5]).unwrap();
        }
        let rep = dcl_regret(&losses, st.history(), 1.0, 1.0, 5);
        assert_abs_diff_eq!(rep.regret, 0.0, epsilon = 1e-9);
        assert!(rep.regret <= rep.bound);
    }
}
