//! CSV outputs of the studies. Column order is fixed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Cell, CellMetrics, SlopeFit};
use crate::error::Result;
use crate::riskfn::RiskKind;

pub const REPORT_HEADER: [&str; 11] = [
    "estimator",
    "risk_fn",
    "budget",
    "n",
    "m",
    "rel_abs_bias",
    "rel_std",
    "rrmse",
    "coverage",
    "reps",
    "seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub estimator: String,
    pub risk_fn: RiskKind,
    pub budget: usize,
    pub n: usize,
    pub m: usize,
    pub rel_abs_bias: f64,
    pub rel_std: f64,
    pub rrmse: f64,
    pub coverage: Option<f64>,
    pub reps: usize,
    pub seconds: f64,
}

impl ReportRow {
    pub fn new(cell: &Cell, kind: RiskKind, m: &CellMetrics, seconds: f64) -> Self {
        ReportRow {
            estimator: cell.estimator.name().to_string(),
            risk_fn: kind,
            budget: cell.budget(),
            n: cell.n,
            m: cell.m,
            rel_abs_bias: m.rel_abs_bias,
            rel_std: m.rel_std,
            rrmse: m.rrmse,
            coverage: m.coverage,
            reps: m.reps,
            seconds,
        }
    }

    pub fn failed(cell: &Cell, kind: RiskKind, reps: usize, seconds: f64) -> Self {
        ReportRow {
            estimator: cell.estimator.name().to_string(),
            risk_fn: kind,
            budget: cell.budget(),
            n: cell.n,
            m: cell.m,
            rel_abs_bias: f64::NAN,
            rel_std: f64::NAN,
            rrmse: f64::NAN,
            coverage: None,
            reps,
            seconds,
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

/// Writes the report CSV. Everything except the `seconds` column is a pure
/// function of the configuration and seed.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.risk_fn.name().to_string(),
            r.budget.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            fmt(r.rel_abs_bias),
            fmt(r.rel_std),
            fmt(r.rrmse),
            r.coverage.map(|c| format!("{c:.6}")).unwrap_or_default(),
            r.reps.to_string(),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `budget,mse_rel,slope_fit`, where `slope_fit` is the fitted power law at
/// that budget.
pub fn write_convergence_csv<W: Write>(points: &[(usize, f64)], fit: Option<&SlopeFit>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["budget", "mse_rel", "slope_fit"])?;
    for &(b, mse) in points {
        let line = fit.map(|f| fmt(f.predict(b as f64))).unwrap_or_default();
        w.write_record([b.to_string(), fmt(mse), line])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_slopes_csv<W: Write>(fits: &[(String, RiskKind, SlopeFit)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "risk_fn", "slope", "stderr", "intercept"])?;
    for (est, kind, f) in fits {
        w.write_record([est.clone(), kind.name().to_string(), fmt(f.slope), fmt(f.stderr), fmt(f.intercept)])?;
    }
    w.flush()?;
    Ok(())
}
