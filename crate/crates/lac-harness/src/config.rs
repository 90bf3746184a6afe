//! Scenario configuration: TOML in, validated `ScenarioConfig` out. Every
//! field has a scenario-specific default, so an empty file runs the
//! cost-vs-error sweep as-is.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use lac_core::sim::{ErrorSchedule, GammaPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Fig1Sweep,
    Fig2Attack,
    Fig3Arm,
    Custom,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fig1_sweep" => Some(ScenarioKind::Fig1Sweep),
            "fig2_attack" => Some(ScenarioKind::Fig2Attack),
            "fig3_arm" => Some(ScenarioKind::Fig3Arm),
            "custom" => Some(ScenarioKind::Custom),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Fig1Sweep => "fig1_sweep",
            ScenarioKind::Fig2Attack => "fig2_attack",
            ScenarioKind::Fig3Arm => "fig3_arm",
            ScenarioKind::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemConfig {
    Lqc {
        c1: f64,
        u_max: Option<f64>,
    },
    RobotArm {
        c2: f64,
        c3: f64,
        c4: f64,
        /// True disturbance `amplitude * sin(2 pi cycles t / T)`.
        truth_amplitude: f64,
        truth_cycles: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicySpec {
    Lac,
    PredictiveMpc,
    NominalMpc,
    SelfTuning,
    Fixed(u32), // lambda in hundredths, keeps Eq/naming simple
}

impl PolicySpec {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lac" => Some(PolicySpec::Lac),
            "pmpc" | "mpc" => Some(PolicySpec::PredictiveMpc),
            "nmpc" | "lqr" => Some(PolicySpec::NominalMpc),
            "selftuning" | "self_tuning" => Some(PolicySpec::SelfTuning),
            _ => {
                let rest = s.strip_prefix("fixed:")?;
                let lambda: f64 = rest.parse().ok()?;
                if (0.0..=1.0).contains(&lambda) {
                    Some(PolicySpec::Fixed((lambda * 100.0).round() as u32))
                } else {
                    None
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            PolicySpec::Lac => "lac".into(),
            PolicySpec::PredictiveMpc => "pmpc".into(),
            PolicySpec::NominalMpc => "nmpc".into(),
            PolicySpec::SelfTuning => "selftuning".into(),
            PolicySpec::Fixed(h) => format!("fixed{h:03}"),
        }
    }

    pub fn lambda_fixed(&self) -> Option<f64> {
        match self {
            PolicySpec::Fixed(h) => Some(*h as f64 / 100.0),
            _ => None,
        }
    }
}

/// Error-injection plan: one schedule per sweep level.
#[derive(Clone, Debug)]
pub enum ErrorPlan {
    None,
    Graded {
        levels: Vec<f64>,
        sigma: f64,
        mean_ones: bool,
    },
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

impl ErrorPlan {
    /// The injection levels this plan sweeps over (norm per level).
    pub fn levels(&self) -> Vec<f64> {
        match self {
            ErrorPlan::None => vec![0.0],
            ErrorPlan::Graded { levels, .. } => levels.clone(),
            ErrorPlan::Attack { norm, .. } => vec![*norm],
        }
    }

    pub fn schedule_for_level(&self, level: f64) -> ErrorSchedule {
        match self {
            ErrorPlan::None => ErrorSchedule::None,
            ErrorPlan::Graded { sigma, mean_ones, .. } => {
                if level == 0.0 {
                    ErrorSchedule::None
                } else {
                    ErrorSchedule::Graded {
                        target: level,
                        sigma: *sigma,
                        mean_ones: *mean_ones,
                    }
                }
            }
            ErrorPlan::Attack {
                start,
                end,
                modulus,
                residues,
                sigma,
                mean_ones,
                ..
            } => ErrorSchedule::Attack {
                start: *start,
                end: *end,
                modulus: *modulus,
                residues: residues.clone(),
                norm: level,
                sigma: *sigma,
                mean_ones: *mean_ones,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub system: SystemConfig,
    pub horizon: usize,
    pub window: usize,
    pub beta: f64,
    /// Damping of the normalized (Newton) confidence update.
    pub learner_damping: f64,
    pub lambda_init: f64,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicySpec>,
    pub error: ErrorPlan,
    pub gamma_policy: GammaPolicy,
    pub out_dir: PathBuf,
    pub diagnostics: bool,
    pub nonlinear_cap: usize,
    /// Emit per-run CSVs even for sweep scenarios.
    pub full_run_csvs: bool,
}

// ---------------------------------------------------------------------
// Raw deserialization layer.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<String>,
    system: Option<RawSystem>,
    run: Option<RawRun>,
    error: Option<RawError>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    kind: Option<String>,
    c1: Option<f64>,
    u_max: Option<f64>,
    unconstrained: Option<bool>,
    c2: Option<f64>,
    c3: Option<f64>,
    c4: Option<f64>,
    truth_amplitude: Option<f64>,
    truth_cycles: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    horizon: Option<usize>,
    window: Option<usize>,
    beta: Option<f64>,
    learner_damping: Option<f64>,
    lambda_init: Option<f64>,
    seeds: Option<Vec<u64>>,
    policies: Option<Vec<String>>,
    nonlinear_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawError {
    kind: Option<String>,
    sigma: Option<f64>,
    mean_ones: Option<bool>,
    levels_start: Option<f64>,
    levels_stop: Option<f64>,
    levels_step: Option<f64>,
    attack_norm: Option<f64>,
    attack_start: Option<usize>,
    attack_end: Option<usize>,
    attack_modulus: Option<usize>,
    attack_residues: Option<Vec<usize>>,
    gamma: Option<String>,
    gamma_fixed: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    diagnostics: Option<bool>,
    full_run_csvs: Option<bool>,
}

fn default_policies() -> Vec<PolicySpec> {
    vec![
        PolicySpec::Lac,
        PolicySpec::PredictiveMpc,
        PolicySpec::NominalMpc,
        PolicySpec::SelfTuning,
    ]
}

fn graded_levels(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step).round() as usize;
    (0..=count)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

/// Parse and validate a config file, applying scenario defaults. Errors are
/// aggregated into one human-readable list.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| vec![format!("config parse error: {e}")])?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    validate_config(raw, base, overrides)
}

/// CLI-level overrides applied after file parsing.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub diagnostics: bool,
}

pub fn default_config(kind: ScenarioKind, out_dir: PathBuf) -> ScenarioConfig {
    let horizon = 200usize;
    let attack = |norm: f64| ErrorPlan::Attack {
        start: horizon.div_ceil(3),
        end: (2 * horizon).div_ceil(3),
        modulus: 5,
        residues: vec![0, 1],
        norm,
        sigma: 0.5,
        mean_ones: true,
    };
    let (system, error, gamma_policy) = match kind {
        ScenarioKind::Fig1Sweep | ScenarioKind::Custom => (
            SystemConfig::Lqc {
                c1: 0.2,
                u_max: Some(10.0),
            },
            ErrorPlan::Graded {
                levels: graded_levels(0.0, 5.0, 0.1),
                sigma: 0.5,
                mean_ones: true,
            },
            GammaPolicy::FromData,
        ),
        ScenarioKind::Fig2Attack => (
            SystemConfig::Lqc {
                c1: 1.0,
                u_max: Some(10.0),
            },
            attack(4.0),
            GammaPolicy::FromData,
        ),
        ScenarioKind::Fig3Arm => (
            SystemConfig::RobotArm {
                c2: 0.5,
                c3: 0.2,
                c4: 0.1,
                truth_amplitude: 0.05,
                truth_cycles: 3.0,
            },
            attack(4.0),
            GammaPolicy::FromTruth,
        ),
    };
    let seeds = match kind {
        ScenarioKind::Fig1Sweep | ScenarioKind::Custom => vec![0, 1, 2, 3, 4],
        _ => vec![0],
    };
    // The sweep grades robustness from a conservative prior and adapts at
    // the learning rate; the attack scenarios start balanced and need the
    // k-step feedback delay to suffice for the response, which pins a
    // faster damping.
    let (lambda_init, learner_damping) = match kind {
        ScenarioKind::Fig1Sweep | ScenarioKind::Custom => (0.0, 0.05),
        _ => (0.5, 0.5),
    };
    ScenarioConfig {
        kind,
        system,
        horizon,
        window: 5,
        beta: 0.05,
        learner_damping,
        lambda_init,
        seeds,
        policies: default_policies(),
        error,
        gamma_policy,
        out_dir,
        diagnostics: false,
        nonlinear_cap: 400,
        full_run_csvs: false,
    }
}

fn validate_config(
    raw: RawConfig,
    base: &Path,
    overrides: &Overrides,
) -> Result<ScenarioConfig, Vec<String>> {
    let mut errors = Vec::new();

    let kind_str = overrides
        .scenario
        .clone()
        .or(raw.scenario.clone())
        .unwrap_or_else(|| "fig1_sweep".into());
    let kind = match ScenarioKind::parse(&kind_str) {
        Some(k) => k,
        None => {
            errors.push(format!(
                "unknown scenario '{kind_str}' (expected fig1_sweep, fig2_attack, fig3_arm, custom)"
            ));
            ScenarioKind::Fig1Sweep
        }
    };

    let out_env = std::env::var_os("LAC_OUT_DIR").map(PathBuf::from);
    let mut cfg = default_config(kind, out_env.unwrap_or_else(|| PathBuf::from("out")));

    if let Some(sys) = raw.system {
        let sys_kind = sys.kind.clone().unwrap_or_else(|| {
            match cfg.system {
                SystemConfig::Lqc { .. } => "lqc",
                SystemConfig::RobotArm { .. } => "robot_arm",
            }
            .into()
        });
        match sys_kind.as_str() {
            "lqc" => {
                let (dc1, du) = match cfg.system {
                    SystemConfig::Lqc { c1, u_max } => (c1, u_max),
                    _ => (0.2, Some(10.0)),
                };
                let u_max = if sys.unconstrained.unwrap_or(false) {
                    None
                } else {
                    sys.u_max.map(Some).unwrap_or(du)
                };
                if let Some(um) = u_max {
                    if um <= 0.0 {
                        errors.push(format!("u_max must be positive, got {um}"));
                    }
                }
                cfg.system = SystemConfig::Lqc {
                    c1: sys.c1.unwrap_or(dc1),
                    u_max,
                };
            }
            "robot_arm" => {
                let (dc2, dc3, dc4, da, dcy) = match cfg.system {
                    SystemConfig::RobotArm {
                        c2,
                        c3,
                        c4,
                        truth_amplitude,
                        truth_cycles,
                    } => (c2, c3, c4, truth_amplitude, truth_cycles),
                    _ => (0.5, 0.2, 0.1, 0.05, 3.0),
                };
                cfg.system = SystemConfig::RobotArm {
                    c2: sys.c2.unwrap_or(dc2),
                    c3: sys.c3.unwrap_or(dc3),
                    c4: sys.c4.unwrap_or(dc4),
                    truth_amplitude: sys.truth_amplitude.unwrap_or(da),
                    truth_cycles: sys.truth_cycles.unwrap_or(dcy),
                };
            }
            other => errors.push(format!("unknown system kind '{other}'")),
        }
    }

    if let Some(run) = raw.run {
        if let Some(h) = run.horizon {
            cfg.horizon = h;
        }
        if let Some(w) = run.window {
            cfg.window = w;
        }
        if let Some(b) = run.beta {
            cfg.beta = b;
            if run.learner_damping.is_none()
                && matches!(kind, ScenarioKind::Fig1Sweep | ScenarioKind::Custom)
            {
                cfg.learner_damping = b;
            }
        }
        if let Some(d) = run.learner_damping {
            cfg.learner_damping = d;
        }
        if let Some(l) = run.lambda_init {
            cfg.lambda_init = l;
        }
        if let Some(s) = run.seeds {
            cfg.seeds = s;
        }
        if let Some(c) = run.nonlinear_cap {
            cfg.nonlinear_cap = c;
        }
        if let Some(pols) = run.policies {
            let mut parsed = Vec::new();
            for p in &pols {
                match PolicySpec::parse(p) {
                    Some(spec) => parsed.push(spec),
                    None => errors.push(format!("unknown policy '{p}'")),
                }
            }
            if !parsed.is_empty() {
                cfg.policies = parsed;
            }
        }
    }

    if let Some(err) = raw.error {
        let kind_str = err.kind.clone().unwrap_or_else(|| {
            match cfg.error {
                ErrorPlan::None => "none",
                ErrorPlan::Graded { .. } => "graded",
                ErrorPlan::Attack { .. } => "attack",
            }
            .into()
        });
        let sigma = err.sigma.unwrap_or(0.5);
        let mean_ones = err.mean_ones.unwrap_or(true);
        match kind_str.as_str() {
            "none" => cfg.error = ErrorPlan::None,
            "graded" => {
                let start = err.levels_start.unwrap_or(0.0);
                let stop = err.levels_stop.unwrap_or(5.0);
                let step = err.levels_step.unwrap_or(0.1);
                if step <= 0.0 || stop < start {
                    errors.push("graded levels need step > 0 and stop >= start".into());
                } else {
                    cfg.error = ErrorPlan::Graded {
                        levels: graded_levels(start, stop, step),
                        sigma,
                        mean_ones,
                    };
                }
            }
            "attack" => {
                let start = err.attack_start.unwrap_or(cfg.horizon.div_ceil(3));
                let end = err.attack_end.unwrap_or((2 * cfg.horizon).div_ceil(3));
                if end <= start {
                    errors.push(format!("attack window [{start}, {end}) is empty"));
                }
                cfg.error = ErrorPlan::Attack {
                    start,
                    end,
                    modulus: err.attack_modulus.unwrap_or(5),
                    residues: err.attack_residues.clone().unwrap_or_else(|| vec![0, 1]),
                    norm: err.attack_norm.unwrap_or(4.0),
                    sigma,
                    mean_ones,
                };
            }
            other => errors.push(format!("unknown error kind '{other}'")),
        }
        if let Some(g) = err.gamma.as_deref() {
            match g {
                "from_data" => cfg.gamma_policy = GammaPolicy::FromData,
                "from_truth" => cfg.gamma_policy = GammaPolicy::FromTruth,
                "fixed" => match err.gamma_fixed {
                    Some(v) if v > 0.0 => cfg.gamma_policy = GammaPolicy::Fixed(v),
                    _ => errors.push("gamma = \"fixed\" needs positive gamma_fixed".into()),
                },
                other => errors.push(format!("unknown gamma policy '{other}'")),
            }
        }
    }

    if let Some(out) = raw.output {
        if let Some(dir) = out.dir {
            let p = PathBuf::from(dir);
            cfg.out_dir = if p.is_absolute() { p } else { base.join(p) };
        }
        if let Some(d) = out.diagnostics {
            cfg.diagnostics = d;
        }
        if let Some(f) = out.full_run_csvs {
            cfg.full_run_csvs = f;
        }
    }

    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if overrides.diagnostics {
        cfg.diagnostics = true;
    }

    // Range checks.
    if cfg.window < 1 {
        errors.push("window must be >= 1".into());
    }
    if cfg.horizon < cfg.window.max(1) {
        errors.push(format!(
            "horizon ({}) must be at least the window ({})",
            cfg.horizon, cfg.window
        ));
    }
    if cfg.beta <= 0.0 {
        errors.push(format!("beta must be positive, got {}", cfg.beta));
    }
    if !(cfg.learner_damping > 0.0 && cfg.learner_damping <= 1.0) {
        errors.push(format!(
            "learner_damping must lie in (0, 1], got {}",
            cfg.learner_damping
        ));
    }
    if !(0.0..=1.0).contains(&cfg.lambda_init) {
        errors.push(format!(
            "lambda_init must lie in [0, 1], got {}",
            cfg.lambda_init
        ));
    }
    if cfg.seeds.is_empty() {
        errors.push("seeds must be nonempty".into());
    }
    if cfg.policies.is_empty() {
        errors.push("policies must be nonempty".into());
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig, Vec<String>> {
        let raw: RawConfig = toml::from_str(text).unwrap();
        validate_config(raw, Path::new("."), &Overrides::default())
    }

    #[test]
    fn empty_file_is_default_sweep() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.kind, ScenarioKind::Fig1Sweep);
        assert_eq!(cfg.horizon, 200);
        assert_eq!(cfg.window, 5);
        assert_eq!(cfg.beta, 0.05);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.error.levels().len(), 51);
        assert_eq!(cfg.policies.len(), 4);
    }

    #[test]
    fn window_zero_is_rejected() {
        let err = parse("[run]\nwindow = 0\n").unwrap_err();
        assert!(
            err.iter().any(|e| e.contains("window must be >= 1")),
            "{err:?}"
        );
    }

    #[test]
    fn negative_beta_is_rejected() {
        let err = parse("[run]\nbeta = -1.0\n").unwrap_err();
        assert!(err.iter().any(|e| e.contains("beta must be positive")));
    }

    #[test]
    fn fig2_defaults_pin_attack_window() {
        let cfg = parse("scenario = \"fig2_attack\"\n").unwrap();
        match &cfg.error {
            ErrorPlan::Attack {
                start,
                end,
                modulus,
                residues,
                norm,
                ..
            } => {
                assert_eq!(*start, 67);
                assert_eq!(*end, 134);
                assert_eq!(*modulus, 5);
                assert_eq!(residues, &vec![0, 1]);
                assert_eq!(*norm, 4.0);
            }
            other => panic!("expected attack plan, got {other:?}"),
        }
        match cfg.system {
            SystemConfig::Lqc { c1, u_max } => {
                assert_eq!(c1, 1.0);
                assert_eq!(u_max, Some(10.0));
            }
            _ => panic!("expected lqc system"),
        }
        assert_eq!(cfg.seeds, vec![0]);
    }

    #[test]
    fn policy_spec_parsing() {
        assert_eq!(PolicySpec::parse("lqr"), Some(PolicySpec::NominalMpc));
        assert_eq!(PolicySpec::parse("fixed:0.25"), Some(PolicySpec::Fixed(25)));
        assert_eq!(PolicySpec::parse("fixed:1.5"), None);
        assert_eq!(PolicySpec::parse("bogus"), None);
    }
}
