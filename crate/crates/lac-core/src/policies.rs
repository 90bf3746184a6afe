//! The controller zoo behind one interface: confidence-weighted MPC with
//! the weight fixed (predictive, nominal, fixed-lambda), learned online
//! with delayed gradients (LAC), or chosen by follow-the-leader
//! (self-tuning).

use alloc::vec::Vec;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::confidence::{ConfidenceError, ConfidenceState, SelfTuningState, SurrogateLoss, UpdateRule};
use crate::lqc::{self, LqcGains};
use crate::model::{StepView, SystemModel};
use crate::noise;
use crate::trajopt::{self, MpcProblem, SolveOptions, TrajoptError};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Solver(#[from] TrajoptError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Lac,
    PredictiveMpc,
    NominalMpc,
    SelfTuning,
    FixedLambda,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Lac => "lac",
            PolicyKind::PredictiveMpc => "pmpc",
            PolicyKind::NominalMpc => "nmpc",
            PolicyKind::SelfTuning => "selftuning",
            PolicyKind::FixedLambda => "fixed",
        }
    }
}

/// How the combined parameters turn into an action.
#[derive(Clone, Debug)]
pub enum ControlLaw {
    /// Explicit receding-horizon formula, clamped to the input box.
    /// Self-tuning on the nonlinear arm passes the linearized gains here.
    LqcClosedForm(LqcGains),
    /// Direct-shooting solve on the actual system.
    Shooting(SolveOptions),
}

pub struct Policy {
    pub kind: PolicyKind,
    law: ControlLaw,
    fixed_lambda: f64,
    confidence: Option<ConfidenceState>,
    self_tuning: Option<SelfTuningState>,
    /// DCL loss weights `rho(0..k)`.
    weights: Vec<f64>,
    /// Windows observed so far, cached for delayed feedback.
    seen_predictions: Vec<Vec<DVector<f64>>>,
    seen_nominals: Vec<Vec<DVector<f64>>>,
    prev_solution: Option<Vec<DVector<f64>>>,
    rng: ChaCha8Rng,
    /// λ actually used at each step.
    pub lambda_log: Vec<f64>,
    /// Combined parameter windows actually used (for hindsight witnesses).
    pub combined_log: Vec<Vec<DVector<f64>>>,
    pub nonconverged_solves: usize,
}

impl Policy {
    fn base(kind: PolicyKind, law: ControlLaw, fixed_lambda: f64, seed: u64) -> Self {
        Policy {
            kind,
            law,
            fixed_lambda,
            confidence: None,
            self_tuning: None,
            weights: Vec::new(),
            seen_predictions: Vec::new(),
            seen_nominals: Vec::new(),
            prev_solution: None,
            rng: noise::substream(seed, "multistart", 0),
            lambda_log: Vec::new(),
            combined_log: Vec::new(),
            nonconverged_solves: 0,
        }
    }

    pub fn predictive_mpc(law: ControlLaw, seed: u64) -> Self {
        Self::base(PolicyKind::PredictiveMpc, law, 1.0, seed)
    }

    pub fn nominal_mpc(law: ControlLaw, seed: u64) -> Self {
        Self::base(PolicyKind::NominalMpc, law, 0.0, seed)
    }

    pub fn fixed_lambda(law: ControlLaw, lambda: f64, seed: u64) -> Self {
        Self::base(PolicyKind::FixedLambda, law, lambda.clamp(0.0, 1.0), seed)
    }

    pub fn self_tuning(law: ControlLaw, init: f64, seed: u64) -> Self {
        let mut p = Self::base(PolicyKind::SelfTuning, law, init, seed);
        p.self_tuning = Some(SelfTuningState::new(init));
        p
    }

    /// LAC: delayed confidence learning with window/delay `k`, step size
    /// `beta`, decay weights `rho`, and initialization `lambda_init`.
    pub fn lac(
        law: ControlLaw,
        weights: Vec<f64>,
        delay: usize,
        beta: f64,
        lambda_init: f64,
        rule: UpdateRule,
        seed: u64,
    ) -> Self {
        let mut p = Self::base(PolicyKind::Lac, law, lambda_init, seed);
        p.confidence = Some(ConfidenceState::with_rule(delay, beta, lambda_init, rule));
        p.weights = weights;
        p
    }

    pub fn confidence(&self) -> Option<&ConfidenceState> {
        self.confidence.as_ref()
    }

    /// Decide the confidence for this step.
    fn select_lambda(&mut self, view: &StepView) -> Result<f64, ConfidenceError> {
        match self.kind {
            PolicyKind::PredictiveMpc | PolicyKind::NominalMpc | PolicyKind::FixedLambda => {
                Ok(self.fixed_lambda)
            }
            PolicyKind::Lac => {
                let state = self.confidence.as_mut().expect("lac state");
                let t = view.t;
                let k = state.delay;
                if t < k {
                    return Ok(state.lambda_at(t));
                }
                // Score the earliest fully observable loss, issued at t-k
                // over the window [t-k, t-1].
                let idx = t - k;
                let window = &self.seen_predictions[idx];
                let noms = &self.seen_nominals[idx];
                let len = usize::min(k, window.len());
                let mut pred_err = Vec::with_capacity(len);
                let mut nominal_err = Vec::with_capacity(len);
                for j in 0..len {
                    let truth = view.truth.get(idx + j);
                    pred_err.push(truth - &window[j]);
                    nominal_err.push(truth - &noms[j]);
                }
                let weights = self.weights.iter().copied().take(len).collect();
                let loss = SurrogateLoss::new(weights, pred_err, nominal_err);
                state.dcl_step(idx, &loss)
            }
            PolicyKind::SelfTuning => {
                // Fold every pair whose target index was just revealed.
                let t = view.t;
                let st = self.self_tuning.as_mut().expect("selftuning state");
                if t >= 1 {
                    let tau = t - 1;
                    for s in 0..=tau {
                        let j = tau - s;
                        if j < self.seen_predictions[s].len() {
                            let truth = view.truth.get(tau);
                            st.observe(
                                &(truth - &self.seen_predictions[s][j]),
                                &(truth - &self.seen_nominals[s][j]),
                            );
                        }
                    }
                }
                Ok(st.current())
            }
        }
    }

    /// Dispatch the confidence-combined parameters to the control law.
    fn confident_action(
        &mut self,
        system: &SystemModel,
        x: &DVector<f64>,
        combined: &[DVector<f64>],
    ) -> Result<DVector<f64>, PolicyError> {
        match &self.law {
            ControlLaw::LqcClosedForm(gains) => {
                let mut u = lqc::receding_action(gains, x, combined);
                if let Some(b) = &system.input_box {
                    u = b.clamp(&u);
                }
                Ok(u)
            }
            ControlLaw::Shooting(options) => {
                let warm = self.prev_solution.as_ref().map(|prev| {
                    // Receding-horizon shift: drop the executed step, repeat
                    // the tail entry to fill the window.
                    let mut shifted: Vec<DVector<f64>> = prev[1..].to_vec();
                    let tail = prev
                        .last()
                        .cloned()
                        .unwrap_or_else(|| DVector::zeros(system.input_dim));
                    while shifted.len() < combined.len() {
                        shifted.push(tail.clone());
                    }
                    shifted.truncate(combined.len());
                    shifted
                });
                let problem = MpcProblem {
                    system,
                    x0: x.clone(),
                    params: combined.to_vec(),
                    warm_start: warm,
                    options: options.clone(),
                };
                let sol = trajopt::solve_mpc(&problem, &mut self.rng)?;
                if !sol.converged {
                    self.nonconverged_solves += 1;
                }
                self.prev_solution = Some(sol.controls.clone());
                Ok(sol.controls[0].clone())
            }
        }
    }

    /// Produce the action for step `view.t` given the observed state.
    pub fn action(
        &mut self,
        system: &SystemModel,
        x: &DVector<f64>,
        view: &StepView,
    ) -> Result<DVector<f64>, PolicyError> {
        debug_assert_eq!(view.t, self.seen_predictions.len(), "steps out of order");
        self.seen_predictions.push(view.predictions.to_vec());
        self.seen_nominals.push(view.nominals.to_vec());

        let lambda = self.select_lambda(view)?;
        let combined: Vec<DVector<f64>> = view
            .predictions
            .iter()
            .zip(view.nominals)
            .map(|(p, n)| p * lambda + n * (1.0 - lambda))
            .collect();
        let u = self.confident_action(system, x, &combined)?;
        self.lambda_log.push(lambda);
        self.combined_log.push(combined);
        Ok(u)
    }
}

/// Form `lambda * phi + (1 - lambda) * kappa` per window entry and solve
/// with the given law (the stateless core of every policy above).
pub fn lambda_confident_action(
    law: &ControlLaw,
    system: &SystemModel,
    x: &DVector<f64>,
    predictions: &[DVector<f64>],
    nominals: &[DVector<f64>],
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>, PolicyError> {
    let combined: Vec<DVector<f64>> = predictions
        .iter()
        .zip(nominals)
        .map(|(p, n)| p * lambda + n * (1.0 - lambda))
        .collect();
    match law {
        ControlLaw::LqcClosedForm(gains) => {
            let mut u = lqc::receding_action(gains, x, &combined);
            if let Some(b) = &system.input_box {
                u = b.clamp(&u);
            }
            Ok(u)
        }
        ControlLaw::Shooting(options) => {
            let problem = MpcProblem {
                system,
                x0: x.clone(),
                params: combined,
                warm_start: None,
                options: options.clone(),
            };
            Ok(trajopt::solve_mpc(&problem, rng)?.controls[0].clone())
        }
    }
}
