//! Python bindings: portfolios, benchmarks, the three estimators and the
//! discrete oracle.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nested_risk::config::ExperimentConfig;
use nested_risk::estimators::{self, GnsSettings, RegressionSettings};
use nested_risk::harness::{self, presets};
use nested_risk::oracle::{DiscreteEstimator, DiscreteNestedProblem};
use nested_risk::payoff::{self, BarrierDirection};
use nested_risk::riskfn::{self, RiskKind};
use nested_risk::rng::ExperimentSeed;
use nested_risk::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn kind(name: &str) -> PyResult<RiskKind> {
    name.parse().map_err(to_py)
}

fn risk_list(kinds: &[String], threshold: f64) -> PyResult<Vec<riskfn::RiskFunction>> {
    kinds.iter().map(|k| Ok(riskfn::RiskFunction::new(kind(k)?, threshold))).collect()
}

#[pyclass(name = "RiskFunction", frozen)]
struct PyRiskFunction(riskfn::RiskFunction);

#[pymethods]
impl PyRiskFunction {
    #[new]
    fn new(kind_name: &str, threshold: f64) -> PyResult<Self> {
        Ok(PyRiskFunction(riskfn::RiskFunction::new(kind(kind_name)?, threshold)))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.name()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.threshold
    }

    fn eval(&self, x: f64) -> f64 {
        self.0.eval(x)
    }

    fn deriv(&self, x: f64) -> PyResult<f64> {
        self.0.deriv(x).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("RiskFunction('{}', {})", self.0.kind, self.0.threshold)
    }
}

#[pyclass(name = "SmoothIndicator", frozen)]
struct PySmoothIndicator(riskfn::SmoothIndicator);

#[pymethods]
impl PySmoothIndicator {
    #[new]
    fn new(threshold: f64, epsilon: f64) -> PyResult<Self> {
        riskfn::SmoothIndicator::new(threshold, epsilon).map(PySmoothIndicator).map_err(to_py)
    }

    fn eval(&self, x: f64) -> f64 {
        self.0.eval(x)
    }

    fn deriv(&self, x: f64) -> f64 {
        self.0.deriv(x)
    }

    fn second(&self, x: f64) -> f64 {
        self.0.second(x)
    }
}

#[pyclass(name = "Portfolio", frozen)]
struct PyPortfolio(payoff::Portfolio);

#[pymethods]
impl PyPortfolio {
    /// The single-asset knock-out portfolio.
    #[staticmethod]
    fn barrier() -> Self {
        PyPortfolio(presets::barrier_portfolio())
    }

    #[staticmethod]
    #[pyo3(signature = (group_size = 4, corr = 0.3))]
    fn multi_asset(group_size: usize, corr: f64) -> PyResult<Self> {
        presets::multi_asset_portfolio(group_size, corr).map(PyPortfolio).map_err(to_py)
    }

    /// Model and portfolio sections of a TOML experiment config.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_toml(text).map_err(to_py)?;
        cfg.portfolio().map(PyPortfolio).map_err(to_py)
    }

    #[getter]
    fn v0(&self) -> f64 {
        self.0.v0()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.model().dim()
    }

    fn __len__(&self) -> usize {
        self.0.instruments().len()
    }
}

#[pyclass(name = "Benchmark", frozen)]
struct PyBenchmark(harness::Benchmark);

#[pymethods]
impl PyBenchmark {
    #[getter]
    fn x0(&self) -> f64 {
        self.0.x0
    }

    #[getter]
    fn n_bench(&self) -> usize {
        self.0.n_bench
    }

    #[getter]
    fn digest(&self) -> String {
        self.0.loss_sample_digest.clone()
    }

    fn rho(&self, kind_name: &str) -> PyResult<f64> {
        Ok(self.0.rho(kind(kind_name)?))
    }

    fn std_error(&self, kind_name: &str) -> PyResult<f64> {
        Ok(self.0.value(kind(kind_name)?).std_error)
    }
}

#[pyclass(name = "GnsReport", frozen)]
struct PyGnsReport(estimators::GnsReport);

#[pymethods]
impl PyGnsReport {
    #[getter]
    fn kind(&self) -> &'static str {
        self.0.risk.kind.name()
    }

    #[getter]
    fn rho_hat(&self) -> f64 {
        self.0.rho_hat
    }

    #[getter]
    fn sigma1_sq_hat(&self) -> f64 {
        self.0.sigma1_sq_hat
    }

    #[getter]
    fn sigma2_sq_hat(&self) -> f64 {
        self.0.sigma2_sq_hat
    }

    #[getter]
    fn std_error(&self) -> f64 {
        self.0.std_error()
    }

    #[getter]
    fn ci(&self) -> (f64, f64) {
        self.0.ci
    }

    #[getter]
    fn epsilon_used(&self) -> Option<f64> {
        self.0.epsilon_used
    }

    #[getter]
    fn pair_evaluations(&self) -> u64 {
        self.0.diagnostics.pair_evaluations
    }

    fn __repr__(&self) -> String {
        format!(
            "GnsReport({}, rho_hat={:.6}, ci=({:.6}, {:.6}))",
            self.0.risk.kind, self.0.rho_hat, self.0.ci.0, self.0.ci.1
        )
    }
}

#[pyfunction]
#[pyo3(signature = (portfolio, n_bench, quantile = 0.9, seed = 2024))]
fn build_benchmark(py: Python<'_>, portfolio: &PyPortfolio, n_bench: usize, quantile: f64, seed: u64) -> PyResult<PyBenchmark> {
    let p = &portfolio.0;
    py.detach(|| harness::build_benchmark(p, n_bench, quantile, &ExperimentSeed(seed).benchmark()))
        .map(PyBenchmark)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (portfolio, kinds, threshold, n, m, seed = 2024, rep = 0, alpha = 0.1))]
#[allow(clippy::too_many_arguments)]
fn gns_estimate(
    py: Python<'_>,
    portfolio: &PyPortfolio,
    kinds: Vec<String>,
    threshold: f64,
    n: usize,
    m: usize,
    seed: u64,
    rep: u64,
    alpha: f64,
) -> PyResult<Vec<PyGnsReport>> {
    let risks = risk_list(&kinds, threshold)?;
    let settings = GnsSettings {
        alpha,
        ..GnsSettings::default()
    };
    let p = &portfolio.0;
    let reports = py
        .detach(|| estimators::gns_estimate(p, &risks, n, m, &settings, ExperimentSeed(seed), rep))
        .map_err(to_py)?;
    Ok(reports.into_iter().map(PyGnsReport).collect())
}

#[pyfunction]
#[pyo3(signature = (portfolio, kinds, threshold, n, m_prime, seed = 2024, rep = 0))]
fn sns_estimate(
    py: Python<'_>,
    portfolio: &PyPortfolio,
    kinds: Vec<String>,
    threshold: f64,
    n: usize,
    m_prime: usize,
    seed: u64,
    rep: u64,
) -> PyResult<Vec<f64>> {
    let risks = risk_list(&kinds, threshold)?;
    let p = &portfolio.0;
    let reports = py
        .detach(|| estimators::sns_estimate(p, &risks, n, m_prime, ExperimentSeed(seed), rep))
        .map_err(to_py)?;
    Ok(reports.iter().map(|r| r.rho_hat).collect())
}

#[pyfunction]
#[pyo3(signature = (portfolio, kinds, threshold, n, basis_order = 4, seed = 2024, rep = 0))]
fn regression_estimate(
    py: Python<'_>,
    portfolio: &PyPortfolio,
    kinds: Vec<String>,
    threshold: f64,
    n: usize,
    basis_order: usize,
    seed: u64,
    rep: u64,
) -> PyResult<Vec<f64>> {
    let risks = risk_list(&kinds, threshold)?;
    let settings = RegressionSettings {
        basis_order,
        ..RegressionSettings::default()
    };
    let p = &portfolio.0;
    let reports = py
        .detach(|| estimators::regression_estimate(p, &risks, n, &settings, ExperimentSeed(seed), rep))
        .map_err(to_py)?;
    Ok(reports.iter().map(|r| r.rho_hat).collect())
}

#[pyclass(name = "DiscreteProblem", frozen)]
struct PyDiscreteProblem(DiscreteNestedProblem);

#[pymethods]
impl PyDiscreteProblem {
    #[new]
    fn new(outer_pmf: Vec<f64>, cond_pmf: Vec<Vec<f64>>, sampling_pmf: Vec<f64>, h_table: Vec<Vec<f64>>) -> PyResult<Self> {
        DiscreteNestedProblem::new(outer_pmf, cond_pmf, sampling_pmf, h_table)
            .map(PyDiscreteProblem)
            .map_err(to_py)
    }

    #[staticmethod]
    fn default() -> Self {
        PyDiscreteProblem(DiscreteNestedProblem::default_instance())
    }

    fn exact_loss(&self, x: usize) -> PyResult<f64> {
        if x >= self.0.outer_states() {
            return Err(PyValueError::new_err(format!("outer state {x} out of range")));
        }
        Ok(self.0.exact_loss(x))
    }

    fn exact_rho(&self, kind_name: &str, threshold: f64) -> PyResult<f64> {
        Ok(self.0.exact_rho(&riskfn::RiskFunction::new(kind(kind_name)?, threshold)))
    }

    /// Point estimates of one replication; `estimator` is "gns" or "sns".
    #[pyo3(signature = (estimator, kinds, threshold, n, m, seed = 2024, rep = 0))]
    #[allow(clippy::too_many_arguments)]
    fn sample(
        &self,
        estimator: &str,
        kinds: Vec<String>,
        threshold: f64,
        n: usize,
        m: usize,
        seed: u64,
        rep: u64,
    ) -> PyResult<Vec<f64>> {
        let est = match estimator {
            "gns" => DiscreteEstimator::Gns,
            "sns" => DiscreteEstimator::Sns,
            other => return Err(PyValueError::new_err(format!("unknown estimator '{other}'"))),
        };
        let risks = risk_list(&kinds, threshold)?;
        nested_risk::oracle::sample_problem(&self.0, est, &risks, n, m, &ExperimentSeed(seed).discrete(rep)).map_err(to_py)
    }
}

#[pyfunction]
fn epsilon_schedule(m: usize, n: usize, scale: f64) -> PyResult<f64> {
    estimators::epsilon_schedule(m, n, scale).map_err(to_py)
}

#[pyfunction]
fn bridge_survival(a: f64, b: f64, barrier: f64, sigma: f64, dt: f64, direction: &str) -> PyResult<f64> {
    let dir = match direction {
        "up" => BarrierDirection::Up,
        "down" => BarrierDirection::Down,
        other => return Err(PyValueError::new_err(format!("direction must be 'up' or 'down', got '{other}'"))),
    };
    Ok(payoff::bridge_survival(a, b, barrier, sigma, dt, dir))
}

/// `(slope, stderr)` of log value against log budget.
#[pyfunction]
fn fit_loglog_slope(budgets: Vec<f64>, values: Vec<f64>) -> PyResult<(f64, f64)> {
    let f = harness::fit_loglog_slope(&budgets, &values).map_err(to_py)?;
    Ok((f.slope, f.stderr))
}

#[pymodule]
fn nested_risk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRiskFunction>()?;
    m.add_class::<PySmoothIndicator>()?;
    m.add_class::<PyPortfolio>()?;
    m.add_class::<PyBenchmark>()?;
    m.add_class::<PyGnsReport>()?;
    m.add_class::<PyDiscreteProblem>()?;
    m.add_function(wrap_pyfunction!(build_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(gns_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(sns_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(regression_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(bridge_survival, m)?)?;
    m.add_function(wrap_pyfunction!(fit_loglog_slope, m)?)?;
    Ok(())
}
