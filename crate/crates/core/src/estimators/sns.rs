//! Standard nested simulation: fresh conditional inner paths per scenario.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{simulate_inner_conditional, simulate_outer};
use crate::payoff::Portfolio;
use crate::riskfn::RiskFunction;
use crate::rng::{ExperimentSeed, Stream};
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnsReport {
    pub risk: RiskFunction,
    pub rho_hat: f64,
    pub n: usize,
    pub m_prime: usize,
    pub inner_simulations: u64,
}

/// `(n, m')` for a budget `Γ` with `m' = round(Γ^{1/3})`, the allocation
/// with the best mean-squared-error rate.
pub fn gordy_juneja_allocation(budget: usize) -> Result<(usize, usize)> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be positive".into()));
    }
    let m_prime = ((budget as f64).cbrt().round() as usize).max(1);
    let n = ((budget as f64 / m_prime as f64).round() as usize).max(1);
    Ok((n, m_prime))
}

/// Sample mean of the loss over `m_prime` conditional inner paths of every
/// scenario. Scenario `i` draws its inner paths from substream `i` of
/// `inner`.
pub fn sns_losses(portfolio: &Portfolio, n: usize, m_prime: usize, outer: &Stream, inner: &Stream) -> Result<Vec<f64>> {
    if m_prime == 0 {
        return Err(Error::InvalidArgument("m_prime must be at least 1".into()));
    }
    let model = portfolio.model();
    let scenarios = simulate_outer(model, n, outer)?;
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = inner.substream(i as u64);
            let paths = simulate_inner_conditional(model, x, m_prime, &mut rng)?;
            let losses: Vec<f64> = paths.iter().map(|y| portfolio.loss(x, y)).collect();
            Ok(mean(&losses))
        })
        .collect()
}

pub fn sns_with_streams(
    portfolio: &Portfolio,
    risks: &[RiskFunction],
    n: usize,
    m_prime: usize,
    outer: &Stream,
    inner: &Stream,
) -> Result<Vec<SnsReport>> {
    let losses = sns_losses(portfolio, n, m_prime, outer, inner)?;
    Ok(risks
        .iter()
        .map(|risk| {
            let g: Vec<f64> = losses.iter().map(|&l| risk.eval(l)).collect();
            SnsReport {
                risk: *risk,
                rho_hat: mean(&g),
                n,
                m_prime,
                inner_simulations: (n * m_prime) as u64,
            }
        })
        .collect())
}

pub fn sns_estimate(
    portfolio: &Portfolio,
    risks: &[RiskFunction],
    n: usize,
    m_prime: usize,
    seed: ExperimentSeed,
    rep: u64,
) -> Result<Vec<SnsReport>> {
    sns_with_streams(portfolio, risks, n, m_prime, &seed.outer(rep), &seed.conditional_inner(rep))
}
