//! Least-squares Monte Carlo baseline: regress noisy losses on functions of
//! the horizon state and apply `g` to the fitted values.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{simulate_inner_conditional, simulate_outer, OuterScenario};
use crate::payoff::Portfolio;
use crate::riskfn::RiskFunction;
use crate::rng::{ExperimentSeed, Stream};
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSettings {
    /// Highest Laguerre order per asset.
    pub basis_order: usize,
    /// Conditional inner paths averaged into each regression target.
    pub inner_per_scenario: usize,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        RegressionSettings {
            basis_order: 4,
            inner_per_scenario: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub risk: RiskFunction,
    pub rho_hat: f64,
    pub n: usize,
    pub basis_size: usize,
    pub rank: usize,
    pub inner_simulations: u64,
}

/// Appends `e^{-x/2} L_k(x)` for `k = 0..=order`.
pub fn laguerre_features(x: f64, order: usize, out: &mut Vec<f64>) {
    let w = (-0.5 * x).exp();
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..=order {
        out.push(w * cur);
        let next = ((2 * k + 1) as f64 - x) * cur - k as f64 * prev;
        prev = cur;
        cur = next / (k + 1) as f64;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    pub rank: usize,
}

impl LeastSquaresFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.coefficients.iter().zip(features).map(|(c, f)| c * f).sum()
    }
}

/// Minimum-norm least squares via SVD. `rows` holds one feature vector per
/// observation. Rank deficiency is logged, not rejected.
pub fn least_squares(rows: &[Vec<f64>], targets: &[f64]) -> Result<LeastSquaresFit> {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if n == 0 || p == 0 || targets.len() != n || rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidArgument("regression design is empty or ragged".into()));
    }
    let design = DMatrix::from_fn(n, p, |i, k| rows[i][k]);
    let svd = design.svd(true, true);
    let top = svd.singular_values.max();
    let tol = top * n.max(p) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        log::warn!("regression design has rank {rank} < {p}; using the minimum-norm solution");
    }
    let beta = svd
        .solve(&DVector::from_column_slice(targets), tol)
        .map_err(|e| Error::NonFinite(format!("least squares failed: {e}")))?;
    Ok(LeastSquaresFit {
        coefficients: beta.iter().copied().collect(),
        rank,
    })
}

/// Intercept plus weighted Laguerre terms in `S_τ / S_0` for every asset
/// that carries an instrument.
fn state_features(portfolio: &Portfolio, assets: &[usize], x: &OuterScenario, order: usize) -> Vec<f64> {
    let s0 = portfolio.model().s0();
    let mut f = Vec::with_capacity(1 + assets.len() * (order + 1));
    f.push(1.0);
    for &a in assets {
        laguerre_features(x.terminal()[a] / s0[a], order, &mut f);
    }
    f
}

pub fn regression_with_streams(
    portfolio: &Portfolio,
    risks: &[RiskFunction],
    n: usize,
    settings: &RegressionSettings,
    outer: &Stream,
    inner: &Stream,
) -> Result<Vec<RegressionReport>> {
    if settings.inner_per_scenario == 0 {
        return Err(Error::InvalidArgument("inner_per_scenario must be at least 1".into()));
    }
    let model = portfolio.model();
    let mut assets: Vec<usize> = portfolio.instruments().iter().map(|i| i.asset).collect();
    assets.sort_unstable();
    assets.dedup();
    let basis_size = 1 + assets.len() * (settings.basis_order + 1);
    if n < basis_size {
        return Err(Error::InvalidArgument(format!(
            "regression needs at least {basis_size} scenarios, got {n}"
        )));
    }
    let scenarios = simulate_outer(model, n, outer)?;
    let targets: Vec<f64> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = inner.substream(i as u64);
            let paths = simulate_inner_conditional(model, x, settings.inner_per_scenario, &mut rng)?;
            let losses: Vec<f64> = paths.iter().map(|y| portfolio.loss(x, y)).collect();
            Ok(mean(&losses))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = scenarios
        .iter()
        .map(|x| state_features(portfolio, &assets, x, settings.basis_order))
        .collect();
    let fit = least_squares(&rows, &targets)?;
    let fitted: Vec<f64> = rows.iter().map(|r| fit.predict(r)).collect();
    Ok(risks
        .iter()
        .map(|risk| RegressionReport {
            risk: *risk,
            rho_hat: mean(&fitted.iter().map(|&l| risk.eval(l)).collect::<Vec<_>>()),
            n,
            basis_size,
            rank: fit.rank,
            inner_simulations: (n * settings.inner_per_scenario) as u64,
        })
        .collect())
}

pub fn regression_estimate(
    portfolio: &Portfolio,
    risks: &[RiskFunction],
    n: usize,
    settings: &RegressionSettings,
    seed: ExperimentSeed,
    rep: u64,
) -> Result<Vec<RegressionReport>> {
    regression_with_streams(portfolio, risks, n, settings, &seed.outer(rep), &seed.regression_inner(rep))
}
