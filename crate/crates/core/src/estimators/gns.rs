//! Green nested simulation: every inner path is reused for every scenario,
//! reweighted by a likelihood ratio.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{PortfolioKernel, RecyclingKernel};
use crate::error::{Error, Result};
use crate::likelihood::LrMode;
use crate::model::{simulate_inner_pooled, simulate_outer};
use crate::payoff::Portfolio;
use crate::riskfn::{RiskFunction, RiskKind, SmoothIndicator};
use crate::rng::Stream;
use crate::stats::{normal_quantile, pairwise_sum};

/// Upper bound on the number of row chunks in the column pass. The
/// reduction order depends only on this and `n`, never on the thread count.
const MAX_CHUNKS: usize = 32;
const DIAGNOSTIC_ROWS: usize = 64;

/// The bump behind `g_ε` has standard deviation `sqrt(4π²/3 - 2) ≈ 3.34`
/// in units of `ε`. A quarter of the loss standard deviation puts the
/// kernel near a normal-reference bandwidth at `m = n = 10⁴`.
pub const DEFAULT_EPSILON_MULTIPLIER: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnsSettings {
    /// Confidence intervals are at level `1 - alpha`.
    pub alpha: f64,
    /// Fixed scale of the indicator bandwidth. When absent the scale is
    /// `epsilon_multiplier` times the sample standard deviation of the
    /// estimated losses.
    pub epsilon_scale: Option<f64>,
    pub epsilon_multiplier: f64,
    pub lr_mode: LrMode,
    /// Largest recycled matrix kept in memory between the two passes;
    /// bigger problems recompute rows instead.
    pub memory_budget_bytes: usize,
}

impl Default for GnsSettings {
    fn default() -> Self {
        GnsSettings {
            alpha: 0.1,
            epsilon_scale: None,
            epsilon_multiplier: DEFAULT_EPSILON_MULTIPLIER,
            lr_mode: LrMode::PerAsset,
            memory_budget_bytes: 1 << 30,
        }
    }
}

impl GnsSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(s) = self.epsilon_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument("epsilon_scale must be positive".into()));
            }
        }
        if !(self.epsilon_multiplier > 0.0 && self.epsilon_multiplier.is_finite()) {
            return Err(Error::InvalidArgument("epsilon_multiplier must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnsDiagnostics {
    pub n: usize,
    pub m: usize,
    /// Largest likelihood ratio seen on the sampled rows.
    pub max_likelihood_ratio: f64,
    /// Mean over sampled rows (and ratio groups) of `(Σ w)² / Σ w²`.
    pub effective_sample_size: f64,
    /// Scenario/path pairs evaluated in the row pass.
    pub pair_evaluations: u64,
    pub inner_simulations: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnsReport {
    pub risk: RiskFunction,
    pub rho_hat: f64,
    pub sigma1_sq_hat: f64,
    pub sigma2_sq_hat: f64,
    /// `σ̂₁²/n + σ̂₂²/m`.
    pub sigma_mn_sq_hat: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub epsilon_used: Option<f64>,
    pub diagnostics: GnsDiagnostics,
}

impl GnsReport {
    pub fn std_error(&self) -> f64 {
        self.sigma_mn_sq_hat.sqrt()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }
}

/// Bandwidth of the smooth indicator for `m` inner paths: `scale · m^{-1/6}`.
pub fn epsilon_schedule(m: usize, n: usize, scale: f64) -> Result<f64> {
    if m < 2 || n < 2 {
        return Err(Error::InvalidArgument("epsilon schedule needs m, n ≥ 2".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon scale must be positive, got {scale}")));
    }
    Ok(scale * (m as f64).powf(-1.0 / 6.0))
}

fn weighted_sum(xs: &[f64], w: Option<&[f64]>, tmp: &mut Vec<f64>) -> f64 {
    match w {
        None => pairwise_sum(xs),
        Some(w) => {
            tmp.clear();
            tmp.extend(xs.iter().zip(w).map(|(x, w)| x * w));
            pairwise_sum(tmp)
        }
    }
}

fn weighted_moments(xs: &[f64], w: Option<&[f64]>, total: f64) -> (f64, f64) {
    let mut tmp = Vec::new();
    let mean = weighted_sum(xs, w, &mut tmp) / total;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, weighted_sum(&dev, w, &mut tmp) / total)
}

/// Row means `L_{m,i}` of the recycled matrix, the same values the
/// estimator's first pass produces.
pub fn recycled_losses<K: RecyclingKernel>(kernel: &K) -> Vec<f64> {
    let m = kernel.cols();
    let col_w = kernel.col_weights();
    let m_total = col_w.map_or(m as f64, |w| w.iter().sum());
    (0..kernel.rows())
        .into_par_iter()
        .map_init(
            || (vec![0.0; m], Vec::new(), Vec::new()),
            |(row, scratch, tmp), i| {
                kernel.fill_row(i, row, scratch);
                weighted_sum(row, col_w, tmp) / m_total
            },
        )
        .collect()
}

/// Runs the two-pass estimator on a kernel for several risk functions at
/// once. Pass one forms `L_{m,i}`; pass two forms the column statistics
/// `Σ_i g'(L_{m,i}) Ĥ_ij` behind `σ̂₂²`.
pub fn gns_from_kernel<K: RecyclingKernel>(
    kernel: &K,
    risks: &[RiskFunction],
    settings: &GnsSettings,
) -> Result<Vec<GnsReport>> {
    settings.validate()?;
    let start = Instant::now();
    let (n, m) = (kernel.rows(), kernel.cols());
    let row_w = kernel.row_weights();
    let col_w = kernel.col_weights();
    if row_w.is_some_and(|w| w.len() != n) || col_w.is_some_and(|w| w.len() != m) {
        return Err(Error::InvalidArgument("kernel weights do not match its shape".into()));
    }
    let n_total = row_w.map_or(n as f64, |w| w.iter().sum());
    let m_total = col_w.map_or(m as f64, |w| w.iter().sum());
    if n_total < 2.0 || m_total < 2.0 {
        return Err(Error::InvalidArgument("GNS needs n, m ≥ 2".into()));
    }

    let cached = n.saturating_mul(m).saturating_mul(8) <= settings.memory_budget_bytes;
    let mut cache = if cached { vec![0.0; n * m] } else { Vec::new() };
    let losses: Vec<f64> = if cached {
        cache
            .par_chunks_mut(m)
            .enumerate()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(scratch, tmp), (i, row)| {
                    kernel.fill_row(i, row, scratch);
                    weighted_sum(row, col_w, tmp) / m_total
                },
            )
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0.0; m], Vec::new(), Vec::new()),
                |(row, scratch, tmp), i| {
                    kernel.fill_row(i, row, scratch);
                    weighted_sum(row, col_w, tmp) / m_total
                },
            )
            .collect()
    };
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!(
            "estimated loss of scenario {i} is {}; the likelihood ratio is degenerate",
            losses[i]
        )));
    }

    // Per risk function: ρ, σ̂₁², the row weights of the column pass, ε.
    let (_, loss_var) = weighted_moments(&losses, row_w, n_total);
    let loss_sd = (loss_var * n_total / (n_total - 1.0)).sqrt();
    let mut partial = Vec::with_capacity(risks.len());
    let mut col_weights_by_risk = Vec::with_capacity(risks.len());
    for risk in risks {
        let g: Vec<f64> = losses.iter().map(|&l| risk.eval(l)).collect();
        let (rho, s1) = weighted_moments(&g, row_w, n_total);
        let (epsilon, deriv): (Option<f64>, Vec<f64>) = match risk.kind {
            RiskKind::Indicator => {
                // A constant loss vector leaves no data-driven scale.
                let base = if loss_sd > 0.0 { loss_sd } else { 1.0 };
                let scale = settings.epsilon_scale.unwrap_or(settings.epsilon_multiplier * base);
                let eps = epsilon_schedule(m_total as usize, n_total as usize, scale)?;
                let smooth = SmoothIndicator::new(risk.threshold, eps)?;
                (Some(eps), losses.iter().map(|&l| smooth.deriv(l)).collect())
            }
            _ => (None, losses.iter().map(|&l| risk.deriv(l)).collect::<Result<_>>()?),
        };
        let w: Vec<f64> = deriv
            .iter()
            .enumerate()
            .map(|(i, d)| d * row_w.map_or(1.0, |w| w[i]) / n_total)
            .collect();
        partial.push((rho, s1, epsilon));
        col_weights_by_risk.push(w);
    }

    let active: Vec<usize> = (0..n)
        .filter(|&i| col_weights_by_risk.iter().any(|w| w[i] != 0.0))
        .collect();
    let r = risks.len();
    let chunks = MAX_CHUNKS.min(active.len()).max(1);
    let per_chunk = active.len().div_ceil(chunks).max(1);
    let chunk_sums: Vec<Vec<f64>> = active
        .par_chunks(per_chunk)
        .map_init(
            || (vec![0.0; m], Vec::new()),
            |(buf, scratch), rows| {
                let mut acc = vec![0.0; r * m];
                for &i in rows {
                    let row: &[f64] = if cached {
                        &cache[i * m..(i + 1) * m]
                    } else {
                        kernel.fill_row(i, buf, scratch);
                        buf
                    };
                    for (k, w) in col_weights_by_risk.iter().enumerate() {
                        let wi = w[i];
                        if wi == 0.0 {
                            continue;
                        }
                        for (a, h) in acc[k * m..(k + 1) * m].iter_mut().zip(row) {
                            *a += wi * h;
                        }
                    }
                }
                acc
            },
        )
        .collect();
    drop(cache);
    let mut col_stats = vec![0.0; r * m];
    for chunk in &chunk_sums {
        for (c, v) in col_stats.iter_mut().zip(chunk) {
            *c += v;
        }
    }

    let (max_lr, ess) = ratio_diagnostics(kernel);
    let seconds = start.elapsed().as_secs_f64();
    let z = normal_quantile(1.0 - settings.alpha / 2.0);
    let reports = risks
        .iter()
        .zip(partial)
        .enumerate()
        .map(|(k, (risk, (rho, s1, epsilon)))| {
            let (_, s2) = weighted_moments(&col_stats[k * m..(k + 1) * m], col_w, m_total);
            let var = s1 / n_total + s2 / m_total;
            let half = z * var.sqrt();
            GnsReport {
                risk: *risk,
                rho_hat: rho,
                sigma1_sq_hat: s1,
                sigma2_sq_hat: s2,
                sigma_mn_sq_hat: var,
                ci: (rho - half, rho + half),
                alpha: settings.alpha,
                epsilon_used: epsilon,
                diagnostics: GnsDiagnostics {
                    n: n_total as usize,
                    m: m_total as usize,
                    max_likelihood_ratio: max_lr,
                    effective_sample_size: ess,
                    pair_evaluations: (n * m) as u64,
                    inner_simulations: m as u64,
                    seconds,
                },
            }
        })
        .collect();
    Ok(reports)
}

fn ratio_diagnostics<K: RecyclingKernel>(kernel: &K) -> (f64, f64) {
    let groups = kernel.ratio_groups();
    if groups == 0 {
        return (f64::NAN, f64::NAN);
    }
    let (n, m) = (kernel.rows(), kernel.cols());
    let rows = DIAGNOSTIC_ROWS.min(n);
    let mut buf = vec![0.0; m];
    let mut max_lr: f64 = 0.0;
    let mut ess_sum = 0.0;
    for k in 0..rows {
        let i = k * n / rows;
        for g in 0..groups {
            kernel.fill_ratios(i, g, &mut buf);
            let s: f64 = buf.iter().sum();
            let s2: f64 = buf.iter().map(|w| w * w).sum();
            max_lr = buf.iter().fold(max_lr, |a, &b| a.max(b));
            ess_sum += if s2 > 0.0 { s * s / s2 } else { 0.0 };
        }
    }
    (max_lr, ess_sum / (rows * groups) as f64)
}

/// Simulates `n` scenarios and `m` pooled inner paths on the given streams
/// and runs the estimator. The two streams must differ, since scenarios and
/// inner paths are required to be independent.
pub fn gns_with_streams(
    portfolio: &Portfolio,
    risks: &[RiskFunction],
    n: usize,
    m: usize,
    settings: &GnsSettings,
    outer: &Stream,
    inner: &Stream,
) -> Result<Vec<GnsReport>> {
    if n < 2 || m < 2 {
        return Err(Error::InvalidArgument("GNS needs n, m ≥ 2".into()));
    }
    if outer == inner {
        return Err(Error::Contract("outer and inner samples share a random stream".into()));
    }
    let model = portfolio.model();
    let scenarios = simulate_outer(model, n, outer)?;
    let inners = simulate_inner_pooled(model, m, inner)?;
    let kernel = PortfolioKernel::new(portfolio, &scenarios, &inners, settings.lr_mode)?;
    gns_from_kernel(&kernel, risks, settings)
}

/// [`gns_with_streams`] with the streams of replication `rep` of `seed`.
pub fn gns_estimate(
    portfolio: &Portfolio,
    risks: &[RiskFunction],
    n: usize,
    m: usize,
    settings: &GnsSettings,
    seed: crate::rng::ExperimentSeed,
    rep: u64,
) -> Result<Vec<GnsReport>> {
    gns_with_streams(portfolio, risks, n, m, settings, &seed.outer(rep), &seed.pooled_inner(rep))
}
