//! Scenario execution: build the system, derive decay weights, fan
//! (policy, seed, level) runs out to a worker pool, and collect metrics,
//! CSVs, plot scripts, and invariant-check outcomes.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lac_core::lqc::{self, LqcGains};
use lac_core::model::{make_lqc_tracking_system, make_robot_arm_system, SystemModel};
use lac_core::confidence::UpdateRule;
use lac_core::policies::{ControlLaw, Policy};
use lac_core::sim::{self, MetricsRecord, TrajectoryLog};
use lac_core::trajopt::{self, SolveOptions};
use lac_core::{DMatrix, DVector};
use crate::config::{ErrorPlan, PolicySpec, ScenarioConfig, ScenarioKind, SystemConfig};
use crate::csv::{self, MetricsRow};
use crate::plot;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] lac_core::model::ModelError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("worker thread panicked")]
    WorkerPanic,
}

/// Everything the scenario needs before any run starts.
pub struct ScenarioSetup {
    pub model: SystemModel,
    pub gains: Option<LqcGains>,
    /// Gains of the linearized model backing self-tuning on the arm.
    pub selftuning_gains: LqcGains,
    pub truth: Vec<DVector<f64>>,
    /// Decay weights for the surrogate losses and bounds.
    pub weights: Vec<f64>,
    pub x0: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub policy: PolicySpec,
    pub seed: u64,
    pub level_index: usize,
    pub level: f64,
    pub gamma: f64,
    pub log: TrajectoryLog,
    pub metrics: MetricsRecord,
    pub lambda_history: Vec<f64>,
    /// Clairvoyant per-step (e_u, e_x), when diagnostics are available.
    pub diag: Option<Vec<(f64, f64)>>,
    /// |recomputed J - accumulated J| for the bookkeeping invariant.
    pub recompute_error: f64,
}

pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub setup: ScenarioSetup,
    pub j_star: f64,
    pub j_star_converged: bool,
    pub runs: Vec<RunResult>,
    pub checks: Vec<CheckOutcome>,
    pub all_converged: bool,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Instantiate the plant, its truth stream, gains, and DCL weights.
pub fn build_setup(config: &ScenarioConfig) -> Result<ScenarioSetup, HarnessError> {
    match &config.system {
        SystemConfig::Lqc { c1, u_max } => {
            let sys = make_lqc_tracking_system(*c1, *u_max, config.horizon)?;
            let sys_weights = lqc_weights(&sys.gains, config.window);
            Ok(ScenarioSetup {
                x0: DVector::zeros(sys.model.state_dim),
                selftuning_gains: sys.gains.clone(),
                gains: Some(sys.gains),
                truth: sys.truth,
                weights: sys_weights,
                model: sys.model,
            })
        }
        SystemConfig::RobotArm {
            c2,
            c3,
            c4,
            truth_amplitude,
            truth_cycles,
        } => {
            let model = make_robot_arm_system(*c2, *c3, *c4, config.horizon)?;
            let truth: Vec<DVector<f64>> = (0..config.horizon)
                .map(|t| {
                    let phase =
                        2.0 * std::f64::consts::PI * truth_cycles * t as f64 / config.horizon as f64;
                    DVector::from_element(1, truth_amplitude * phase.sin())
                })
                .collect();
            // Self-tuning runs on the linearization x' = (1 + c2) x + c3 u.
            let a = DMatrix::from_element(1, 1, 1.0 + c2);
            let b = DMatrix::from_element(1, 1, *c3);
            let q = DMatrix::from_element(1, 1, 1.0);
            let r = DMatrix::from_element(1, 1, *c4);
            let selftuning_gains = lqc::solve_dare(&a, &b, &q, &r, config.horizon)
                .map_err(lac_core::model::ModelError::Lqc)?;
            let weights = arm_weights(&model, config, *truth_amplitude);
            Ok(ScenarioSetup {
                x0: DVector::zeros(1),
                gains: None,
                selftuning_gains,
                truth,
                weights,
                model,
            })
        }
    }
}

/// LQC decay weights `rho(j) = C_F ||M|| ||P|| rho_F^j`.
pub fn lqc_weights(gains: &LqcGains, window: usize) -> Vec<f64> {
    let lead = gains.c_f * lqc::operator_norm(&gains.m) * lqc::operator_norm(&gains.p);
    (0..window)
        .map(|j| lead * gains.rho_f.powi(j as i32))
        .collect()
}

/// Arm decay weights from the empirical perturbation table.
fn arm_weights(model: &SystemModel, config: &ScenarioConfig, amplitude: f64) -> Vec<f64> {
    let mut rng = lac_core::noise::substream(config.seeds.first().copied().unwrap_or(0), "edpb", 0);
    let options = SolveOptions {
        multi_start: false,
        ..SolveOptions::default()
    };
    let xs: Vec<DVector<f64>> = (0..6)
        .map(|i| DVector::from_element(1, -0.15 + 0.06 * i as f64))
        .collect();
    let mut solve_rng = lac_core::noise::substream(0, "edpb-solve", 0);
    let table = trajopt::estimate_edpb(
        |trial, params| {
            let problem = trajopt::MpcProblem {
                system: model,
                x0: xs[trial % xs.len()].clone(),
                params: params.to_vec(),
                warm_start: None,
                options: options.clone(),
            };
            trajopt::solve_mpc(&problem, &mut solve_rng)
                .map(|s| s.controls[0].clone())
                .unwrap_or_else(|_| DVector::zeros(1))
        },
        config.window,
        1,
        6,
        0.2 * amplitude.max(1e-3),
        |rng| DVector::from_element(1, amplitude * (2.0 * lac_core::noise::uniform(rng) - 1.0)),
        &mut rng,
    );
    if table.iter().all(|v| *v <= 0.0) {
        vec![1.0; config.window]
    } else {
        table
    }
}

fn policy_law(
    spec: &PolicySpec,
    setup: &ScenarioSetup,
    multi_start: bool,
) -> ControlLaw {
    match (&setup.gains, spec) {
        (_, PolicySpec::SelfTuning) => ControlLaw::LqcClosedForm(setup.selftuning_gains.clone()),
        (Some(g), _) => ControlLaw::LqcClosedForm(g.clone()),
        (None, _) => ControlLaw::Shooting(SolveOptions {
            multi_start,
            ..SolveOptions::default()
        }),
    }
}

fn build_policy(spec: &PolicySpec, setup: &ScenarioSetup, config: &ScenarioConfig, seed: u64) -> Policy {
    let law = policy_law(spec, setup, true);
    match spec {
        PolicySpec::Lac => Policy::lac(
            law,
            setup.weights.clone(),
            config.window,
            config.beta,
            config.lambda_init,
            UpdateRule::DampedNewton {
                damping: config.learner_damping,
            },
            seed,
        ),
        PolicySpec::PredictiveMpc => Policy::predictive_mpc(law, seed),
        PolicySpec::NominalMpc => Policy::nominal_mpc(law, seed),
        PolicySpec::SelfTuning => Policy::self_tuning(law, config.lambda_init, seed),
        PolicySpec::Fixed(h) => Policy::fixed_lambda(law, *h as f64 / 100.0, seed),
    }
}

/// Execute one (seed, level) cell: shared prediction bundle, one run per
/// policy.
pub fn run_cell(
    config: &ScenarioConfig,
    setup: &ScenarioSetup,
    seed: u64,
    level_index: usize,
    level: f64,
    j_star: f64,
) -> Result<Vec<RunResult>, HarnessError> {
    let schedule = config.error.schedule_for_level(level);
    let mut noise_rng = lac_core::noise::substream(seed, "noise", level_index as u64);
    let (bundle, set) = sim::inject_errors(
        &setup.truth,
        config.window,
        &schedule,
        config.gamma_policy,
        &mut noise_rng,
    );
    let gamma = set.diameter();
    let model = setup.model.clone().with_uncertainty(set);

    let mut results = Vec::with_capacity(config.policies.len());
    for (p_idx, spec) in config.policies.iter().enumerate() {
        let policy_seed = seed
            .wrapping_mul(1_000_003)
            .wrapping_add((level_index * 64 + p_idx) as u64);
        let mut policy = build_policy(spec, setup, config, policy_seed);
        let log = sim::run_closed_loop(&model, &mut policy, &bundle, &setup.x0)?;
        let lambda_history = policy.lambda_log.clone();
        let metrics = sim::competitive_report(
            setup.gains.as_ref(),
            &bundle,
            &log,
            (*spec == PolicySpec::Lac).then_some(lambda_history.as_slice()),
            &setup.weights,
            gamma,
            config.window,
            j_star,
        );
        let diag = match &setup.gains {
            Some(g)
                if config.diagnostics
                    && model.input_box.is_none()
                    && model.state_box.is_none() =>
            {
                Some(sim::per_step_error_diag(
                    g,
                    &log,
                    &policy.combined_log,
                    &bundle.truth,
                ))
            }
            _ => None,
        };
        let recompute_error = (log.recompute_cost(&model, &bundle.truth) - log.total_cost).abs();
        results.push(RunResult {
            policy: spec.clone(),
            seed,
            level_index,
            level,
            gamma,
            log,
            metrics,
            lambda_history,
            diag,
            recompute_error,
        });
    }
    Ok(results)
}

/// Offline optimal cost for the scenario's truth stream.
pub fn scenario_j_star(
    config: &ScenarioConfig,
    setup: &ScenarioSetup,
) -> Result<(f64, bool), HarnessError> {
    let mut rng = lac_core::noise::substream(config.seeds.first().copied().unwrap_or(0), "offline", 0);
    let opt = sim::offline_optimum(
        &setup.model,
        setup.gains.as_ref(),
        &setup.truth,
        &setup.x0,
        config.nonlinear_cap,
        &mut rng,
    )?;
    Ok((opt.cost, opt.converged))
}

/// Run every (seed, level) cell of the scenario on `jobs` workers and write
/// the artifacts. Results are ordered canonically regardless of scheduling.
pub fn run_scenario(config: &ScenarioConfig, jobs: usize) -> Result<ScenarioReport, HarnessError> {
    let setup = build_setup(config)?;
    let (j_star, j_star_converged) = scenario_j_star(config, &setup)?;

    let levels = config.error.levels();
    let mut cells: Vec<(usize, u64, usize, f64)> = Vec::new(); // (cell idx, seed, level idx, level)
    for (li, level) in levels.iter().enumerate() {
        for seed in &config.seeds {
            cells.push((cells.len(), *seed, li, *level));
        }
    }

    let slots: Mutex<Vec<Option<Result<Vec<RunResult>, HarnessError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = jobs.max(1).min(cells.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (idx, seed, li, level) = cells[i];
                let out = run_cell(config, &setup, seed, li, level, j_star);
                slots.lock().unwrap()[idx] = Some(out);
            });
        }
    });

    let mut runs = Vec::new();
    for slot in slots.into_inner().unwrap() {
        let cell = slot.ok_or(HarnessError::WorkerPanic)??;
        runs.extend(cell);
    }

    let all_converged =
        j_star_converged && runs.iter().all(|r| r.log.nonconverged_solves == 0);
    let checks = run_checks(config, &runs);

    write_artifacts(config, &setup, &runs, j_star)?;

    Ok(ScenarioReport {
        config: config.clone(),
        setup,
        j_star,
        j_star_converged,
        runs,
        checks,
        all_converged,
    })
}

fn write_artifacts(
    config: &ScenarioConfig,
    setup: &ScenarioSetup,
    runs: &[RunResult],
    _j_star: f64,
) -> Result<(), HarnessError> {
    let dir = config.out_dir.join(config.kind.name());
    std::fs::create_dir_all(&dir)?;

    let rows: Vec<MetricsRow> = runs
        .iter()
        .map(|r| MetricsRow {
            policy: r.policy.name(),
            seed: r.seed,
            error_norm: r.level,
            record: r.metrics.clone(),
        })
        .collect();
    csv::write_file(&dir.join("metrics.csv"), &csv::metrics_csv(&rows))?;

    let per_run_csvs = config.full_run_csvs
        || config.diagnostics
        || matches!(
            config.kind,
            ScenarioKind::Fig2Attack | ScenarioKind::Fig3Arm | ScenarioKind::Custom
        );
    if per_run_csvs {
        for r in runs {
            let name = format!(
                "runs/{}_s{}_l{:03}.csv",
                r.policy.name(),
                r.seed,
                r.level_index
            );
            csv::write_file(&dir.join(name), &csv::run_csv(&r.log, r.diag.as_deref()))?;
        }
        // One stream dump per (seed, level) for the figure scripts.
        for r in runs {
            if r.policy == config.policies[0] {
                let schedule = config.error.schedule_for_level(r.level);
                let mut rng = lac_core::noise::substream(r.seed, "noise", r.level_index as u64);
                let (bundle, _) = sim::inject_errors(
                    &setup.truth,
                    config.window,
                    &schedule,
                    config.gamma_policy,
                    &mut rng,
                );
                let name = format!("streams_s{}_l{:03}.csv", r.seed, r.level_index);
                csv::write_file(&dir.join(name), &csv::streams_csv(&bundle))?;
            }
        }
    }

    let script = plot::emit_plot_script(config, "metrics.csv");
    csv::write_file(&dir.join("plot.py"), &script)?;
    Ok(())
}

// ---------------------------------------------------------------------
// Invariant checks over completed runs.

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Spearman rank correlation (ties broken by index; inputs here are
/// distinct means).
pub fn spearman(values: &[f64]) -> f64 {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let d2: f64 = rank
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let d = i as f64 - r as f64;
            d * d
        })
        .sum();
    1.0 - 6.0 * d2 / (n as f64 * (n as f64 * n as f64 - 1.0))
}

fn mean_policy_cost_at(runs: &[RunResult], policy: &PolicySpec, level_index: usize) -> f64 {
    mean(
        runs.iter()
            .filter(|r| r.policy == *policy && r.level_index == level_index)
            .map(|r| r.log.total_cost),
    )
}

pub fn run_checks(config: &ScenarioConfig, runs: &[RunResult]) -> Vec<CheckOutcome> {
    let mut out = Vec::new();

    let worst_recompute = runs
        .iter()
        .map(|r| r.recompute_error / (1.0 + r.log.total_cost.abs()))
        .fold(0.0, f64::max);
    out.push(CheckOutcome {
        name: "cost_recomputation".into(),
        pass: worst_recompute <= 1e-10,
        detail: format!("max relative replay error {worst_recompute:.3e}"),
    });

    match config.kind {
        ScenarioKind::Fig1Sweep => {
            let top = config.error.levels().len() - 1;
            let lac0 = mean_policy_cost_at(runs, &PolicySpec::Lac, 0);
            let pmpc0 = mean_policy_cost_at(runs, &PolicySpec::PredictiveMpc, 0);
            let lac_top = mean_policy_cost_at(runs, &PolicySpec::Lac, top);
            let pmpc_top = mean_policy_cost_at(runs, &PolicySpec::PredictiveMpc, top);
            let nmpc_top = mean_policy_cost_at(runs, &PolicySpec::NominalMpc, top);
            let pass = lac_top <= pmpc_top && lac_top <= 1.1 * nmpc_top && lac0 <= 1.1 * pmpc0;
            out.push(CheckOutcome {
                name: "monotone_robustness".into(),
                pass,
                detail: format!(
                    "level0: lac {lac0:.3} vs 1.1*pmpc {:.3}; top: lac {lac_top:.3} vs pmpc {pmpc_top:.3}, 1.1*nmpc {:.3}",
                    1.1 * pmpc0,
                    1.1 * nmpc_top
                ),
            });

            let n_levels = config.error.levels().len();
            let coarse: Vec<usize> = (0..5).map(|i| i * (n_levels - 1) / 4).collect();
            let means: Vec<f64> = coarse
                .iter()
                .map(|&li| mean_policy_cost_at(runs, &PolicySpec::PredictiveMpc, li))
                .collect();
            let rho = spearman(&means);
            out.push(CheckOutcome {
                name: "pmpc_cost_monotone".into(),
                pass: rho >= 0.9,
                detail: format!("spearman {rho:.3} over coarse means {means:?}"),
            });
        }
        ScenarioKind::Fig2Attack | ScenarioKind::Fig3Arm => {
            // The lambda-response shape is a property of the linear attack
            // figure; the arm's clipped attack makes lambda* genuinely
            // swing, so only the cost and box checks apply there.
            if config.kind == ScenarioKind::Fig2Attack {
            if let ErrorPlan::Attack {
                start,
                end,
                modulus,
                ref residues,
                ..
            } = config.error
            {
                for r in runs.iter().filter(|r| r.policy == PolicySpec::Lac) {
                    let burn = start + 2 * config.window;
                    let pre: Vec<f64> = (0..start).map(|t| r.lambda_history[t]).collect();
                    let during: Vec<f64> = (start..end).map(|t| r.lambda_history[t]).collect();
                    let attacked: Vec<f64> = (burn..end)
                        .filter(|t| residues.contains(&(t % modulus)))
                        .map(|t| r.lambda_history[t])
                        .collect();
                    let mean_pre = mean(pre.iter().copied());
                    let mean_during = mean(during.iter().copied());
                    let low_frac = attacked.iter().filter(|l| **l < 0.2).count() as f64
                        / attacked.len().max(1) as f64;
                    out.push(CheckOutcome {
                        name: format!("attack_response_s{}", r.seed),
                        pass: mean_during < mean_pre && low_frac >= 0.5,
                        detail: format!(
                            "mean lambda pre {mean_pre:.3} vs during {mean_during:.3}; lambda<0.2 on {:.0}% of attacked steps",
                            100.0 * low_frac
                        ),
                    });
                }
            }
            }
            if config.kind == ScenarioKind::Fig3Arm {
                for r in runs {
                    let in_box = matches!(
                        r.policy,
                        PolicySpec::Lac | PolicySpec::NominalMpc
                    );
                    if !in_box {
                        continue;
                    }
                    let worst = r
                        .log
                        .steps
                        .iter()
                        .map(|s| s.state[0].abs())
                        .fold(r.log.terminal_state[0].abs(), f64::max);
                    out.push(CheckOutcome {
                        name: format!("state_box_{}_s{}", r.policy.name(), r.seed),
                        pass: worst <= 0.2 + 1e-6,
                        detail: format!("max |x| = {worst:.6}"),
                    });
                    let feasible = r.log.infeasible_steps == 0;
                    out.push(CheckOutcome {
                        name: format!("recursive_feasibility_{}_s{}", r.policy.name(), r.seed),
                        pass: feasible,
                        detail: format!("{} infeasible steps", r.log.infeasible_steps),
                    });
                }
                let lac = mean(
                    runs.iter()
                        .filter(|r| r.policy == PolicySpec::Lac)
                        .map(|r| r.log.total_cost),
                );
                let pmpc = mean(
                    runs.iter()
                        .filter(|r| r.policy == PolicySpec::PredictiveMpc)
                        .map(|r| r.log.total_cost),
                );
                let st = mean(
                    runs.iter()
                        .filter(|r| r.policy == PolicySpec::SelfTuning)
                        .map(|r| r.log.total_cost),
                );
                out.push(CheckOutcome {
                    name: "lac_cost_minimal".into(),
                    pass: lac <= pmpc && lac <= st,
                    detail: format!("lac {lac:.4} vs pmpc {pmpc:.4}, selftuning {st:.4}"),
                });
            }
        }
        ScenarioKind::Custom => {}
    }
    out
}

/// Where a scenario's metrics CSV lands.
pub fn metrics_path(config: &ScenarioConfig) -> PathBuf {
    config.out_dir.join(config.kind.name()).join("metrics.csv")
}
