//! CSV emission. Floats carry 17 significant digits so that re-running a
//! scenario with the same seeds reproduces files byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use lac_core::model::PredictionBundle;
use lac_core::sim::{MetricsRecord, TrajectoryLog};

/// 17 significant digits; `inf`/`nan` spelled out.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub struct MetricsRow {
    pub policy: String,
    pub seed: u64,
    pub error_norm: f64,
    pub record: MetricsRecord,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "policy,seed,error_norm,J,J_star,CR,varpi_rho,varpi_gram,thm3_upper,thm4_lower,dcl_regret,lemma3_bound,adversity\n",
    );
    for row in rows {
        let r = &row.record;
        let cr = match r.cr {
            Some(v) => fmt_float(v),
            None => "inf".into(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.policy,
            row.seed,
            fmt_float(row.error_norm),
            fmt_float(r.j),
            fmt_float(r.j_star),
            cr,
            fmt_float(r.varpi_rho),
            fmt_float(r.varpi_gram),
            opt_float(r.upper_bound),
            opt_float(r.lower_bound),
            opt_float(r.dcl_regret),
            opt_float(r.lemma_bound),
            r.adversity,
        );
    }
    out
}

/// Per-step run table: `t, x..., u..., cost, lambda, feasible, e_u, e_x`.
pub fn run_csv(log: &TrajectoryLog, diag: Option<&[(f64, f64)]>) -> String {
    let n = log.steps[0].state.len();
    let m = log.steps[0].action.len();
    let mut out = String::from("t");
    for i in 0..n {
        let _ = write!(out, ",x{i}");
    }
    for i in 0..m {
        let _ = write!(out, ",u{i}");
    }
    out.push_str(",cost,lambda,feasible,e_u,e_x\n");
    for (idx, rec) in log.steps.iter().enumerate() {
        let _ = write!(out, "{}", rec.t);
        for i in 0..n {
            let _ = write!(out, ",{}", fmt_float(rec.state[i]));
        }
        for i in 0..m {
            let _ = write!(out, ",{}", fmt_float(rec.action[i]));
        }
        let (e_u, e_x) = match diag {
            Some(d) => (fmt_float(d[idx].0), fmt_float(d[idx].1)),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            ",{},{},{},{},{}",
            fmt_float(rec.cost),
            fmt_float(rec.lambda),
            u8::from(rec.feasible),
            e_u,
            e_x
        );
    }
    out
}

/// Truth/prediction/nominal streams: `t, tau, kind, components...`.
pub fn streams_csv(bundle: &PredictionBundle) -> String {
    let dim = bundle.truth[0].len();
    let mut out = String::from("t,tau,kind");
    for i in 0..dim {
        let _ = write!(out, ",c{i}");
    }
    out.push('\n');
    let write_row = |out: &mut String, t: usize, tau: usize, kind: &str, v: &lac_core::DVector<f64>| {
        let _ = write!(out, "{t},{tau},{kind}");
        for i in 0..dim {
            let _ = write!(out, ",{}", fmt_float(v[i]));
        }
        out.push('\n');
    };
    for (t, v) in bundle.truth.iter().enumerate() {
        write_row(&mut out, t, t, "truth", v);
    }
    for (t, window) in bundle.predictions.iter().enumerate() {
        for (j, v) in window.iter().enumerate() {
            write_row(&mut out, t, t + j, "pred", v);
        }
    }
    for (t, window) in bundle.nominals.iter().enumerate() {
        for (j, v) in window.iter().enumerate() {
            write_row(&mut out, t, t + j, "nominal", v);
        }
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_17_significant_digits() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        let third = 1.0 / 3.0;
        let parsed: f64 = fmt_float(third).parse().unwrap();
        assert_eq!(parsed, third);
    }
}
