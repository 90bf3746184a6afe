use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lac_harness::config::{self, Overrides};
use lac_harness::runner;

#[derive(Parser)]
#[command(name = "lac", about = "Learning-augmented control workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a TOML config (empty file = default sweep).
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file.
    config: PathBuf,
    /// Override the scenario preset (fig1_sweep, fig2_attack, fig3_arm, custom).
    #[arg(long)]
    scenario: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's, or $LAC_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Per-step error diagnostics and per-run CSVs everywhere.
    #[arg(long)]
    diagnostics: bool,
    /// Run the invariant checks and fail the exit status on violations.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let overrides = Overrides {
        scenario: args.scenario.clone(),
        seed: args.seed,
        out: args.out.clone(),
        diagnostics: args.diagnostics,
    };
    let cfg = match config::load_config(&args.config, &overrides) {
        Ok(cfg) => cfg,
        Err(errors) => {
            eprintln!("invalid config:");
            for e in errors {
                eprintln!("  - {e}");
            }
            return ExitCode::from(2);
        }
    };

    let jobs = if args.jobs == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        args.jobs
    };

    eprintln!(
        "running {} (T={}, k={}, {} policies x {} seeds x {} levels, {jobs} workers)",
        cfg.kind.name(),
        cfg.horizon,
        cfg.window,
        cfg.policies.len(),
        cfg.seeds.len(),
        cfg.error.levels().len(),
    );
    let report = match runner::run_scenario(&cfg, jobs) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("scenario failed: {e}");
            return ExitCode::FAILURE;
        }
    };

    eprintln!(
        "J* = {:.6} ({}); {} runs, artifacts in {}",
        report.j_star,
        if report.j_star_converged {
            "converged"
        } else {
            "not converged"
        },
        report.runs.len(),
        cfg.out_dir.join(cfg.kind.name()).display()
    );

    let mut ok = report.all_converged;
    if !report.all_converged {
        eprintln!("warning: some solves did not converge to tolerance");
        for r in &report.runs {
            if r.log.nonconverged_solves > 0 {
                eprintln!(
                    "  {} seed {} level {}: {} of {} solves",
                    r.policy.name(),
                    r.seed,
                    r.level,
                    r.log.nonconverged_solves,
                    r.log.steps.len()
                );
            }
        }
    }
    if args.check {
        for check in &report.checks {
            eprintln!(
                "[{}] {}: {}",
                if check.pass { "PASS" } else { "FAIL" },
                check.name,
                check.detail
            );
            ok &= check.pass;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
