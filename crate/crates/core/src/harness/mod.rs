//! Benchmarks, macro replications and error metrics.

pub mod presets;
pub mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    gns_estimate, regression_estimate, sns_estimate, GnsReport, GnsSettings, RegressionSettings,
};
use crate::model::outer_scenario;
use crate::payoff::Portfolio;
use crate::riskfn::{RiskFunction, RiskKind};
use crate::rng::{ExperimentSeed, Stream};
use crate::stats::{empirical_quantile, mean, population_variance};

pub use report::{write_convergence_csv, write_report_csv, write_slopes_csv, ReportRow};

pub const MIN_BENCHMARK_SIZE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkValue {
    pub kind: RiskKind,
    pub rho: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub n_bench: usize,
    pub quantile: f64,
    pub x0: f64,
    pub values: Vec<BenchmarkValue>,
    /// SHA-256 of the little-endian loss sample, in scenario order.
    pub loss_sample_digest: String,
}

impl Benchmark {
    pub fn risk(&self, kind: RiskKind) -> RiskFunction {
        RiskFunction::new(kind, self.x0)
    }

    pub fn risks(&self) -> Vec<RiskFunction> {
        self.values.iter().map(|v| self.risk(v.kind)).collect()
    }

    pub fn value(&self, kind: RiskKind) -> &BenchmarkValue {
        self.values.iter().find(|v| v.kind == kind).expect("every kind is benchmarked")
    }

    pub fn rho(&self, kind: RiskKind) -> f64 {
        self.value(kind).rho
    }
}

/// Benchmark from a sample of exact losses. The threshold is the empirical
/// `quantile` of the sample unless `x0` is given.
pub fn benchmark_from_losses(losses: &[f64], quantile: f64, x0: Option<f64>) -> Result<Benchmark> {
    if losses.len() < 2 {
        return Err(Error::InvalidArgument("benchmark needs at least two losses".into()));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1), got {quantile}")));
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("benchmark loss {i} is {}", losses[i])));
    }
    let x0 = x0.unwrap_or_else(|| empirical_quantile(losses, quantile));
    let n = losses.len() as f64;
    let values = RiskKind::ALL
        .iter()
        .map(|&kind| {
            let g = RiskFunction::new(kind, x0);
            let vals: Vec<f64> = losses.iter().map(|&l| g.eval(l)).collect();
            BenchmarkValue {
                kind,
                rho: mean(&vals),
                std_error: (population_variance(&vals) / (n - 1.0)).sqrt(),
            }
        })
        .collect();
    let mut hasher = Sha256::new();
    for l in losses {
        hasher.update(l.to_le_bytes());
    }
    let digest = hasher.finalize();
    Ok(Benchmark {
        n_bench: losses.len(),
        quantile,
        x0,
        values,
        loss_sample_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// Exact losses of `n` scenarios drawn from `stream`, in scenario order.
pub fn analytic_losses(portfolio: &Portfolio, n: usize, stream: &Stream) -> Vec<f64> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| portfolio.analytic_loss(&outer_scenario(portfolio.model(), stream, i)))
        .collect()
}

pub fn build_benchmark(portfolio: &Portfolio, n_bench: usize, quantile: f64, stream: &Stream) -> Result<Benchmark> {
    if n_bench < MIN_BENCHMARK_SIZE {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs at least {MIN_BENCHMARK_SIZE} scenarios, got {n_bench}"
        )));
    }
    benchmark_from_losses(&analytic_losses(portfolio, n_bench, stream), quantile, None)
}

/// Error summary of one cell over its macro replications. Variances are
/// population variances, so `mse = bias² + variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub rel_abs_bias: f64,
    pub rel_std: f64,
    pub rrmse: f64,
    pub coverage: Option<f64>,
    pub reps: usize,
}

pub fn cell_metrics(estimates: &[f64], truth: f64, covered: Option<&[bool]>) -> CellMetrics {
    let mean_est = mean(estimates);
    let bias = mean_est - truth;
    let variance = population_variance(estimates);
    let sq: Vec<f64> = estimates.iter().map(|e| (e - truth) * (e - truth)).collect();
    let mse = mean(&sq);
    let scale = truth.abs();
    CellMetrics {
        mean: mean_est,
        bias,
        variance,
        mse,
        rel_abs_bias: bias.abs() / scale,
        rel_std: variance.sqrt() / scale,
        rrmse: mse.sqrt() / scale,
        coverage: covered.map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len() as f64),
        reps: estimates.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

impl SlopeFit {
    pub fn predict(&self, budget: f64) -> f64 {
        (self.intercept + self.slope * budget.ln()).exp()
    }
}

/// Ordinary least squares of `log value` on `log budget`.
pub fn fit_loglog_slope(budgets: &[f64], values: &[f64]) -> Result<SlopeFit> {
    if budgets.len() != values.len() || budgets.len() < 3 {
        return Err(Error::InvalidArgument("slope fit needs at least three points".into()));
    }
    if budgets.iter().chain(values).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("slope fit needs positive finite values".into()));
    }
    let x: Vec<f64> = budgets.iter().map(|b| b.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (mean(&x), mean(&y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 1e-12 {
        return Err(Error::InvalidArgument("budgets have no spread".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(SlopeFit {
        slope,
        stderr: (rss / (n - 2.0) / sxx).sqrt(),
        intercept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Gns,
    Sns,
    Regression,
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Gns => "gns",
            EstimatorSpec::Sns => "sns",
            EstimatorSpec::Regression => "regression",
        }
    }
}

/// One study cell. `m` is the pooled inner count for GNS, the inner count
/// per scenario for SNS and the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub estimator: EstimatorSpec,
    pub n: usize,
    pub m: usize,
}

impl Cell {
    pub fn gns(budget: usize) -> Self {
        Cell {
            estimator: EstimatorSpec::Gns,
            n: budget,
            m: budget,
        }
    }

    pub fn sns(n: usize, m_prime: usize) -> Self {
        Cell {
            estimator: EstimatorSpec::Sns,
            n,
            m: m_prime,
        }
    }

    pub fn regression(n: usize, inner_per_scenario: usize) -> Self {
        Cell {
            estimator: EstimatorSpec::Regression,
            n,
            m: inner_per_scenario,
        }
    }

    /// Number of inner simulations. For GNS this is `m`; the `n·m`
    /// reweighted evaluations are not counted.
    pub fn budget(&self) -> usize {
        match self.estimator {
            EstimatorSpec::Gns => self.m,
            EstimatorSpec::Sns | EstimatorSpec::Regression => self.n * self.m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub reps: usize,
    pub seed: ExperimentSeed,
    pub gns: GnsSettings,
    pub regression: RegressionSettings,
}

/// Replication tag of rep `rep` in cell `cell`; cells never share streams.
pub fn replication_tag(cell: usize, rep: usize) -> u64 {
    ((cell as u64) << 32) | rep as u64
}

/// GNS reports of the given replications, one inner vector per rep.
pub fn gns_replications(
    portfolio: &Portfolio,
    risks: &[RiskFunction],
    budget: usize,
    settings: &GnsSettings,
    seed: ExperimentSeed,
    tags: impl IntoIterator<Item = u64>,
) -> Result<Vec<Vec<GnsReport>>> {
    tags.into_iter()
        .map(|tag| gns_estimate(portfolio, risks, budget, budget, settings, seed, tag))
        .collect()
}

/// Point estimates and coverage flags of every risk function in one cell.
struct CellOutcome {
    estimates: Vec<Vec<f64>>,
    covered: Option<Vec<Vec<bool>>>,
}

fn run_cell(
    portfolio: &Portfolio,
    benchmark: &Benchmark,
    cell: &Cell,
    index: usize,
    opts: &StudyOptions,
) -> Result<CellOutcome> {
    let risks = benchmark.risks();
    let k = risks.len();
    let mut estimates = vec![Vec::with_capacity(opts.reps); k];
    let mut covered = vec![Vec::with_capacity(opts.reps); k];
    for rep in 0..opts.reps {
        let tag = replication_tag(index, rep);
        match cell.estimator {
            EstimatorSpec::Gns => {
                let reports = gns_estimate(portfolio, &risks, cell.n, cell.m, &opts.gns, opts.seed, tag)?;
                for (r, rep) in reports.iter().enumerate() {
                    estimates[r].push(rep.rho_hat);
                    covered[r].push(rep.covers(benchmark.rho(rep.risk.kind)));
                }
            }
            EstimatorSpec::Sns => {
                for (r, rep) in sns_estimate(portfolio, &risks, cell.n, cell.m, opts.seed, tag)?.iter().enumerate() {
                    estimates[r].push(rep.rho_hat);
                }
            }
            EstimatorSpec::Regression => {
                let settings = RegressionSettings {
                    inner_per_scenario: cell.m,
                    ..opts.regression.clone()
                };
                for (r, rep) in regression_estimate(portfolio, &risks, cell.n, &settings, opts.seed, tag)?
                    .iter()
                    .enumerate()
                {
                    estimates[r].push(rep.rho_hat);
                }
            }
        }
    }
    Ok(CellOutcome {
        estimates,
        covered: (cell.estimator == EstimatorSpec::Gns).then_some(covered),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    /// Cells that failed, with the error message. Their rows carry NaN
    /// metrics.
    pub failures: Vec<(Cell, String)>,
}

impl ExperimentReport {
    /// `(budget, relative MSE)` of one estimator and risk function, in
    /// budget order.
    pub fn convergence(&self, estimator: EstimatorSpec, kind: RiskKind) -> Vec<(usize, f64)> {
        let mut pts: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter(|r| r.estimator == estimator.name() && r.risk_fn == kind && r.rrmse.is_finite())
            .map(|r| (r.budget, r.rrmse * r.rrmse))
            .collect();
        pts.sort_by_key(|p| p.0);
        pts
    }
}

/// Runs every cell for `opts.reps` macro replications against the
/// benchmark. A failing cell is recorded and the others still run.
pub fn run_macro_study(
    portfolio: &Portfolio,
    benchmark: &Benchmark,
    cells: &[Cell],
    opts: &StudyOptions,
) -> Result<ExperimentReport> {
    if opts.reps == 0 {
        return Err(Error::InvalidArgument("macro study needs at least one replication".into()));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (index, cell) in cells.iter().enumerate() {
        let start = Instant::now();
        let outcome = run_cell(portfolio, benchmark, cell, index, opts);
        let seconds = start.elapsed().as_secs_f64();
        match outcome {
            Ok(out) => {
                for (r, v) in benchmark.values.iter().enumerate() {
                    let cov = out.covered.as_ref().map(|c| c[r].as_slice());
                    rows.push(ReportRow::new(cell, v.kind, &cell_metrics(&out.estimates[r], v.rho, cov), seconds));
                }
            }
            Err(e) => {
                log::error!("cell {} n={} m={} failed: {e}", cell.estimator.name(), cell.n, cell.m);
                for v in &benchmark.values {
                    rows.push(ReportRow::failed(cell, v.kind, opts.reps, seconds));
                }
                failures.push((*cell, e.to_string()));
            }
        }
    }
    Ok(ExperimentReport { rows, failures })
}
