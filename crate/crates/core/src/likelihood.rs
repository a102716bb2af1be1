//! Likelihood ratio `f(Y|X) / f̃(Y)` between the conditional inner law and
//! the pooled sampling law.
//!
//! Both laws share the risk-neutral transitions after `t_{k*+1}`, so the ratio
//! collapses to the one-step transition density of `S_{t_{k*+1}}` given
//! `S_{t_{k*}}` over the marginal sampling density of `S_{t_{k*+1}}`. In log
//! prices both are Gaussian with covariances `C Δ` and `C (τ + Δ)`, where
//! `C = Σ Σᵀ` and `Δ = t_{k*+1} - τ`. Whitening with `Σ⁻¹` turns each density
//! into an isotropic one, and the Jacobian terms cancel:
//!
//! ```text
//! log LR = -|Σ⁻¹(u - x - m_Δ)|² / 2Δ + |Σ⁻¹(u - b)|² / 2(τ+Δ) + (d/2) log((τ+Δ)/Δ)
//! ```
//!
//! with `u = log S_{t_{k*+1}}`, `x = log S_τ`, `m_Δ` the risk-neutral log
//! drift over `Δ` and `b` the mean of `u` under the sampling law.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InnerPath, MarketModel, OuterScenario};

/// How inner outputs are weighted when a portfolio spans several assets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrMode {
    /// One joint ratio over all assets.
    Joint,
    /// Each instrument is weighted by the marginal ratio of its own
    /// underlying. Identical to `Joint` for a single asset.
    #[default]
    PerAsset,
}

#[derive(Debug, Clone)]
pub struct LikelihoodRatioEvaluator {
    dim: usize,
    /// Lower-triangular `Σ`, row-major.
    vol: Vec<f64>,
    /// Per-asset total volatility `sqrt(Σ_j σ_aj²)`.
    asset_vol: Vec<f64>,
    log_s0: Vec<f64>,
    /// Variance scale of the transition, `Δ`.
    trans_var: f64,
    /// Variance scale of the sampling marginal, `τ + Δ`.
    marg_var: f64,
    /// Risk-neutral log drift over `Δ`, per asset.
    trans_drift: Vec<f64>,
    /// Mean of `log S_{t_{k*+1}}` under the sampling law, per asset.
    marg_mean: Vec<f64>,
    log_norm_per_dim: f64,
}

impl LikelihoodRatioEvaluator {
    pub fn new(model: &MarketModel) -> Result<Self> {
        let d = model.dim();
        let grid = model.grid();
        let k1 = grid.horizon_index() + 1;
        let trans_var = grid.dt(k1);
        let marg_var = grid.horizon() + trans_var;
        if !(trans_var > 0.0) || !(marg_var > trans_var) {
            return Err(Error::InvalidModel("degenerate horizon step".into()));
        }
        let asset_vol: Vec<f64> = (0..d).map(|a| model.total_vol(a)).collect();
        let trans_drift = (0..d)
            .map(|a| (model.r() - 0.5 * model.total_variance(a)) * trans_var)
            .collect();
        let marg_mean = (0..d).map(|a| model.pooled_log_mean(a)).collect();
        Ok(LikelihoodRatioEvaluator {
            dim: d,
            vol: model.vol_matrix().to_vec(),
            asset_vol,
            log_s0: model.s0().iter().map(|s| s.ln()).collect(),
            trans_var,
            marg_var,
            trans_drift,
            marg_mean,
            log_norm_per_dim: 0.5 * (marg_var / trans_var).ln(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn transition_variance_scale(&self) -> f64 {
        self.trans_var
    }

    pub fn marginal_variance_scale(&self) -> f64 {
        self.marg_var
    }

    /// Solves `Σ z = v` in place by forward substitution.
    fn whiten(&self, v: &mut [f64]) {
        let d = self.dim;
        for a in 0..d {
            let row = &self.vol[a * d..a * d + a];
            let mut acc = v[a];
            for (s, z) in row.iter().zip(v.iter()) {
                acc -= s * z;
            }
            v[a] = acc / self.vol[a * d + a];
        }
    }

    /// Joint log ratio from the horizon prices and the first inner point.
    pub fn log_ratio_from_points(&self, s_tau: &[f64], s_next: &[f64]) -> f64 {
        let d = self.dim;
        let mut v = vec![0.0; d];
        let mut w = vec![0.0; d];
        for a in 0..d {
            let u = s_next[a].ln();
            v[a] = u - s_tau[a].ln() - self.trans_drift[a];
            w[a] = u - self.marg_mean[a];
        }
        self.whiten(&mut v);
        self.whiten(&mut w);
        let qv: f64 = v.iter().map(|z| z * z).sum();
        let qw: f64 = w.iter().map(|z| z * z).sum();
        -qv / (2.0 * self.trans_var) + qw / (2.0 * self.marg_var) + d as f64 * self.log_norm_per_dim
    }

    /// `log[f(S_{t_{k*+1}} | S_{t_{k*}}) / f̃(S_{t_{k*+1}})]`.
    pub fn log_likelihood_ratio(&self, scenario: &OuterScenario, inner: &InnerPath) -> f64 {
        self.log_ratio_from_points(scenario.terminal(), inner.first_point())
    }

    /// Marginal log ratio of one asset.
    pub fn asset_log_likelihood_ratio(&self, asset: usize, s_tau: f64, s_next: f64) -> f64 {
        let sd = self.asset_vol[asset];
        let u = s_next.ln();
        let v = (u - s_tau.ln() - self.trans_drift[asset]) / sd;
        let w = (u - self.marg_mean[asset]) / sd;
        -v * v / (2.0 * self.trans_var) + w * w / (2.0 * self.marg_var) + self.log_norm_per_dim
    }

    /// Precomputed per-scenario and per-path terms so that the joint log
    /// ratio of a pair costs `O(d)`: `log LR = col_const - |p - q|² / 2Δ`.
    pub(crate) fn joint_row_terms(&self, s_tau: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = (0..self.dim)
            .map(|a| s_tau[a].ln() - self.log_s0[a] + self.trans_drift[a])
            .collect();
        self.whiten(&mut q);
        q
    }

    pub(crate) fn joint_col_terms(&self, s_next: &[f64]) -> (Vec<f64>, f64) {
        let d = self.dim;
        let mut p: Vec<f64> = (0..d).map(|a| s_next[a].ln() - self.log_s0[a]).collect();
        let mut w: Vec<f64> = (0..d).map(|a| s_next[a].ln() - self.marg_mean[a]).collect();
        self.whiten(&mut p);
        self.whiten(&mut w);
        let qw: f64 = w.iter().map(|z| z * z).sum();
        (p, qw / (2.0 * self.marg_var) + d as f64 * self.log_norm_per_dim)
    }

    /// Per-asset analogue of [`Self::joint_row_terms`].
    pub(crate) fn asset_row_term(&self, asset: usize, s_tau: f64) -> f64 {
        (s_tau.ln() - self.log_s0[asset] + self.trans_drift[asset]) / self.asset_vol[asset]
    }

    pub(crate) fn asset_col_terms(&self, asset: usize, s_next: f64) -> (f64, f64) {
        let sd = self.asset_vol[asset];
        let p = (s_next.ln() - self.log_s0[asset]) / sd;
        let w = (s_next.ln() - self.marg_mean[asset]) / sd;
        (p, w * w / (2.0 * self.marg_var) + self.log_norm_per_dim)
    }
}

/// Average of `exp(log LR)` over all scenario/path pairs; close to 1 when the
/// inner paths were drawn from the sampling law.
pub fn mean_ratio_check(
    eval: &LikelihoodRatioEvaluator,
    scenarios: &[OuterScenario],
    inners: &[InnerPath],
) -> Result<f64> {
    if scenarios.is_empty() || inners.is_empty() {
        return Err(Error::InvalidArgument("mean_ratio_check needs nonempty inputs".into()));
    }
    let mut total = 0.0;
    for x in scenarios {
        let row: f64 = inners
            .iter()
            .map(|y| eval.log_likelihood_ratio(x, y).exp())
            .sum();
        total += row / inners.len() as f64;
    }
    Ok(total / scenarios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;
    use std::f64::consts::PI;

    fn lognormal_pdf(s: f64, log_mean: f64, var: f64) -> f64 {
        let z = s.ln() - log_mean;
        (-z * z / (2.0 * var)).exp() / (s * (2.0 * PI * var).sqrt())
    }

    fn barrier_model() -> MarketModel {
        let grid = TimeGrid::uniform(1.0, 200, 12).unwrap();
        MarketModel::single_asset(100.0, 0.08, 0.05, 0.2, grid).unwrap()
    }

    #[test]
    fn matches_explicit_density_ratio() {
        let model = barrier_model();
        let eval = LikelihoodRatioEvaluator::new(&model).unwrap();
        let (s_tau, s_next) = (103.0f64, 104.0f64);
        let dt = 1.0 / 200.0;
        let tau = 3.0 / 50.0;
        let f = lognormal_pdf(s_next, s_tau.ln() + (0.05 - 0.02) * dt, 0.04 * dt);
        let f_tilde = lognormal_pdf(
            s_next,
            100.0f64.ln() + (0.08 - 0.02) * tau + (0.05 - 0.02) * dt,
            0.04 * (tau + dt),
        );
        let got = eval.log_ratio_from_points(&[s_tau], &[s_next]).exp();
        assert!(((got - f / f_tilde) / (f / f_tilde)).abs() < 1e-12, "{got} vs {}", f / f_tilde);
        let got_asset = eval.asset_log_likelihood_ratio(0, s_tau, s_next).exp();
        assert!(((got_asset - f / f_tilde) / (f / f_tilde)).abs() < 1e-12);
    }

    #[test]
    fn markov_locality() {
        let model = barrier_model();
        let eval = LikelihoodRatioEvaluator::new(&model).unwrap();
        let x = OuterScenario::from_prices(vec![100.0; 12], 1).unwrap();
        let mut y = InnerPath::from_prices(vec![101.0; 188], 1).unwrap();
        let before = eval.log_likelihood_ratio(&x, &y);
        y.prices_mut()[5] = 250.0;
        y.prices_mut()[187] = 3.0;
        assert_eq!(before, eval.log_likelihood_ratio(&x, &y));
        let x2 = OuterScenario::from_prices(
            (0..12).map(|k| if k == 11 { 100.0 } else { 80.0 + k as f64 }).collect(),
            1,
        )
        .unwrap();
        assert_eq!(before, eval.log_likelihood_ratio(&x2, &y));
    }

    #[test]
    fn identical_densities_give_unit_ratio() {
        // With a zero-length outer history the sampling law is the transition
        // law from s0 itself. Emulate by a two-point grid with tiny τ: the
        // ratio evaluated at the median point of both laws tends to 1.
        let grid = TimeGrid::new(vec![0.0, 1e-14, 0.5, 1.0], 1).unwrap();
        let model = MarketModel::single_asset(100.0, 0.05, 0.05, 0.2, grid).unwrap();
        let eval = LikelihoodRatioEvaluator::new(&model).unwrap();
        let s_tau = 100.0;
        let s_next = 100.0 * ((0.05 - 0.02) * 0.5f64).exp();
        let lr = eval.log_ratio_from_points(&[s_tau], &[s_next]);
        assert!(lr.abs() < 1e-12, "{lr}");
    }

    #[test]
    fn fast_terms_agree_with_direct_evaluation() {
        let grid = TimeGrid::uniform(1.0, 50, 3).unwrap();
        let model = MarketModel::new(
            vec![100.0, 80.0, 120.0],
            0.08,
            0.05,
            vec![vec![0.2], vec![0.1, 0.25], vec![-0.05, 0.1, 0.3]],
            grid,
        )
        .unwrap();
        let eval = LikelihoodRatioEvaluator::new(&model).unwrap();
        let s_tau = [104.0, 77.0, 125.0];
        let s_next = [105.0, 76.5, 127.0];
        let q = eval.joint_row_terms(&s_tau);
        let (p, c) = eval.joint_col_terms(&s_next);
        let sq: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
        let fast = c - sq / (2.0 * eval.trans_var);
        let direct = eval.log_ratio_from_points(&s_tau, &s_next);
        assert!((fast - direct).abs() < 1e-12, "{fast} vs {direct}");
        for a in 0..3 {
            let q = eval.asset_row_term(a, s_tau[a]);
            let (p, c) = eval.asset_col_terms(a, s_next[a]);
            let fast = c - (p - q) * (p - q) / (2.0 * eval.trans_var);
            let direct = eval.asset_log_likelihood_ratio(a, s_tau[a], s_next[a]);
            assert!((fast - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_ratio_of_independent_assets_factorises() {
        let grid = TimeGrid::uniform(1.0, 20, 2).unwrap();
        let model = MarketModel::new(
            vec![100.0, 50.0],
            0.08,
            0.05,
            vec![vec![0.2], vec![0.0, 0.3]],
            grid,
        )
        .unwrap();
        let eval = LikelihoodRatioEvaluator::new(&model).unwrap();
        let joint = eval.log_ratio_from_points(&[101.0, 52.0], &[102.0, 51.0]);
        let sum = eval.asset_log_likelihood_ratio(0, 101.0, 102.0)
            + eval.asset_log_likelihood_ratio(1, 52.0, 51.0);
        assert!((joint - sum).abs() < 1e-12);
    }

    #[test]
    fn single_pair_mean_ratio_is_the_ratio() {
        let model = barrier_model();
        let eval = LikelihoodRatioEvaluator::new(&model).unwrap();
        let x = OuterScenario::from_prices(vec![102.0; 12], 1).unwrap();
        let y = InnerPath::from_prices(vec![101.0; 188], 1).unwrap();
        let v = eval.log_likelihood_ratio(&x, &y).exp();
        assert_eq!(mean_ratio_check(&eval, &[x], &[y]).unwrap(), v);
        assert!(mean_ratio_check(&eval, &[], &[]).is_err());
    }
}
