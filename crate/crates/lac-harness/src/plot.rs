//! Plot-script generation. The core stays free of rendering dependencies;
//! each scenario gets a self-contained matplotlib script that reads only
//! the emitted CSVs. Output text is deterministic.

use crate::config::{ErrorPlan, ScenarioConfig, ScenarioKind};

pub fn emit_plot_script(config: &ScenarioConfig, metrics_name: &str) -> String {
    match config.kind {
        ScenarioKind::Fig1Sweep | ScenarioKind::Custom => sweep_script(config, metrics_name),
        ScenarioKind::Fig2Attack => attack_script(config, false),
        ScenarioKind::Fig3Arm => attack_script(config, true),
    }
}

const PRELUDE: &str = r#"#!/usr/bin/env python3
# Generated by the lac harness; reads only the CSVs next to this script.
import csv
import math
import os
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))

def read_csv(name):
    with open(os.path.join(HERE, name), newline="") as fh:
        return list(csv.DictReader(fh))
"#;

fn sweep_script(config: &ScenarioConfig, metrics_name: &str) -> String {
    let policies: Vec<String> = config.policies.iter().map(|p| p.name()).collect();
    let policy_list = policies
        .iter()
        .map(|p| format!("\"{p}\""))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        r#"{PRELUDE}
rows = read_csv("{metrics_name}")
policies = [{policy_list}]
labels = {{"lac": "LAC", "pmpc": "MPC", "nmpc": "LQR", "selftuning": "Self-Tuning"}}
by = defaultdict(list)
for r in rows:
    by[(r["policy"], float(r["error_norm"]))].append(float(r["J"]))

fig, ax = plt.subplots(figsize=(7, 4.5))
for p in policies:
    levels = sorted(set(l for (q, l) in by if q == p))
    means = [sum(by[(p, l)]) / len(by[(p, l)]) for l in levels]
    stds = [
        math.sqrt(sum((v - mu) ** 2 for v in by[(p, l)]) / len(by[(p, l)]))
        for l, mu in zip(levels, means)
    ]
    ax.plot(levels, means, label=labels.get(p, p))
    ax.fill_between(
        levels,
        [m - s for m, s in zip(means, stds)],
        [m + s for m, s in zip(means, stds)],
        alpha=0.2,
    )
ax.set_xlabel("prediction error norm")
ax.set_ylabel("total cost")
ax.legend()
ax.grid(alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(HERE, "fig1_cost_vs_error.png"), dpi=150)
print("wrote fig1_cost_vs_error.png")
"#
    )
}

fn attack_script(config: &ScenarioConfig, arm: bool) -> String {
    let seed = config.seeds.first().copied().unwrap_or(0);
    let policies: Vec<String> = config.policies.iter().map(|p| p.name()).collect();
    let policy_list = policies
        .iter()
        .map(|p| format!("\"{p}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let (start, end) = match &config.error {
        ErrorPlan::Attack { start, end, .. } => (*start, *end),
        _ => (0, 0),
    };
    let fig_name = if arm { "fig3_arm" } else { "fig2_attack" };
    let panels = if arm { "4" } else { "3" };
    let arm_flag = if arm { "True" } else { "False" };
    format!(
        r#"{PRELUDE}
policies = [{policy_list}]
labels = {{"lac": "LAC", "pmpc": "P-MPC", "nmpc": "N-MPC", "selftuning": "Self-Tuning"}}
SEED = {seed}
ATTACK = ({start}, {end})
ARM = {arm_flag}

runs = {{p: read_csv(os.path.join("runs", f"{{p}}_s{seed}_l000.csv")) for p in policies}}
streams = read_csv("streams_s{seed}_l000.csv")

# Window prediction-error norm per issue step.
truth = {{}}
for r in streams:
    if r["kind"] == "truth":
        truth[int(r["tau"])] = [float(v) for k, v in r.items() if k.startswith("c")]
err = defaultdict(float)
for r in streams:
    if r["kind"] == "pred":
        t, tau = int(r["t"]), int(r["tau"])
        pred = [float(v) for k, v in r.items() if k.startswith("c")]
        err[t] += sum((a - b) ** 2 for a, b in zip(pred, truth[tau]))
steps = sorted(err)
err_norm = [math.sqrt(err[t]) for t in steps]

fig, axes = plt.subplots({panels}, 1, figsize=(7, {panels} * 2.2), sharex=True)
row = 0
if ARM:
    ax = axes[row]; row += 1
    for p in policies:
        ax.plot([int(r["t"]) for r in runs[p]], [float(r["x0"]) for r in runs[p]],
                label=labels.get(p, p))
    ax.axhline(0.2, color="k", ls=":", lw=0.8)
    ax.axhline(-0.2, color="k", ls=":", lw=0.8)
    ax.set_ylabel("state")
    ax.legend(ncol=4, fontsize=7)
    ax = axes[row]; row += 1
    for p in policies:
        ax.plot([int(r["t"]) for r in runs[p]], [float(r["u0"]) for r in runs[p]],
                label=labels.get(p, p))
    ax.set_ylabel("input")
else:
    ax = axes[row]; row += 1
    ax.plot(steps, err_norm, color="tab:red")
    ax.set_ylabel("pred. error")

ax = axes[row]; row += 1
totals = []
for p in policies:
    cost = [float(r["cost"]) for r in runs[p]]
    total = sum(cost)
    totals.append(f"{{labels.get(p, p)}}: {{total:.1f}} ({{total / 5.0:.1f}})")
    ax.plot([int(r["t"]) for r in runs[p]], cost, label=labels.get(p, p))
ax.set_ylabel("instant cost")
ax.set_yscale("symlog", linthresh=1e-3)
ax.legend(ncol=4, fontsize=7)
ax.text(0.02, 0.95, "totals (J, J/5): " + "; ".join(totals), transform=ax.transAxes,
        fontsize=7, va="top")

ax = axes[row]; row += 1
for p in ("lac", "selftuning"):
    if p in runs:
        ax.plot([int(r["t"]) for r in runs[p]], [float(r["lambda"]) for r in runs[p]],
                label=labels.get(p, p))
ax.set_ylabel("lambda")
ax.set_xlabel("t")
ax.set_ylim(-0.05, 1.05)
ax.legend(fontsize=7)

for ax in axes:
    ax.axvspan(ATTACK[0], ATTACK[1], color="gray", alpha=0.15)
    ax.grid(alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(HERE, "{fig_name}.png"), dpi=150)
print("wrote {fig_name}.png")
"#
    )
}
