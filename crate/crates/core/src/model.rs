//! Multi-asset Black–Scholes market model and its path simulators.
//!
//! Prices are stepped in log space with the exact lognormal transition, so
//! there is no discretisation bias at the grid points. Asset `a` has log
//! dynamics
//!
//! ```text
//! d log S^a = (drift - ½ Σ_j σ_aj²) dt + Σ_j σ_aj dB^j
//! ```
//!
//! with `drift = μ` for outer scenarios (real-world measure) and `drift = r`
//! for inner paths (risk-neutral measure). The volatility matrix is lower
//! triangular and is applied to the Brownian increments directly.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Simulation instants `0 = t_0 < t_1 < ... < t_N = T` and the risk horizon
/// `τ = t_{k*}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    horizon_index: usize,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, horizon_index: usize) -> Result<Self> {
        if times.len() < 3 {
            return Err(Error::InvalidModel(
                "time grid needs at least t_0, the horizon and maturity".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidModel("time grid must start at t_0 = 0".into()));
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidModel(format!(
                "time grid is not strictly increasing at index {}",
                k + 1
            )));
        }
        let n = times.len() - 1;
        if horizon_index < 1 || horizon_index > n - 1 {
            return Err(Error::InvalidModel(format!(
                "horizon index {horizon_index} must lie in 1..={}",
                n - 1
            )));
        }
        Ok(TimeGrid {
            times,
            horizon_index,
        })
    }

    /// `steps` equal intervals on `[0, maturity]`.
    pub fn uniform(maturity: f64, steps: usize, horizon_index: usize) -> Result<Self> {
        if !(maturity > 0.0) || steps < 2 {
            return Err(Error::InvalidModel(
                "uniform grid needs maturity > 0 and at least 2 steps".into(),
            ));
        }
        let times = (0..=steps)
            .map(|k| maturity * k as f64 / steps as f64)
            .collect();
        TimeGrid::new(times, horizon_index)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon_index(&self) -> usize {
        self.horizon_index
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.horizon_index]
    }

    pub fn maturity(&self) -> f64 {
        self.times[self.steps()]
    }

    /// `Δt_k = t_k - t_{k-1}` for `k ≥ 1`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k] - self.times[k - 1]
    }

    /// Index of the grid point equal to `t` (within 1e-9 relative).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.maturity().max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }
}

/// Multi-asset GBM parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    s0: Vec<f64>,
    mu: f64,
    r: f64,
    /// Lower-triangular, row-major `d × d`.
    vol: Vec<f64>,
    grid: TimeGrid,
}

impl MarketModel {
    /// `vol` holds the rows of the lower-triangular volatility matrix; entries
    /// above the diagonal must be zero (rows may also be given ragged, with
    /// row `a` of length `a + 1`).
    pub fn new(s0: Vec<f64>, mu: f64, r: f64, vol: Vec<Vec<f64>>, grid: TimeGrid) -> Result<Self> {
        let d = s0.len();
        if d == 0 {
            return Err(Error::InvalidModel("at least one asset required".into()));
        }
        if let Some(a) = s0.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidModel(format!("s0[{a}] must be positive")));
        }
        if !mu.is_finite() || !r.is_finite() {
            return Err(Error::InvalidModel("mu and r must be finite".into()));
        }
        if vol.len() != d {
            return Err(Error::InvalidModel(format!(
                "vol has {} rows, expected {d}",
                vol.len()
            )));
        }
        let mut flat = vec![0.0; d * d];
        for (a, row) in vol.iter().enumerate() {
            if row.len() != a + 1 && row.len() != d {
                return Err(Error::InvalidModel(format!(
                    "vol row {a} has {} entries, expected {} or {d}",
                    row.len(),
                    a + 1
                )));
            }
            for (b, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidModel(format!("vol[{a}][{b}] is not finite")));
                }
                if b > a && v != 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "vol must be lower triangular; vol[{a}][{b}] = {v}"
                    )));
                }
                flat[a * d + b] = v;
            }
            if !(flat[a * d + a] > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "vol diagonal entry {a} must be positive"
                )));
            }
        }
        Ok(MarketModel {
            s0,
            mu,
            r,
            vol: flat,
            grid,
        })
    }

    /// Single asset with scalar volatility.
    pub fn single_asset(s0: f64, mu: f64, r: f64, sigma: f64, grid: TimeGrid) -> Result<Self> {
        MarketModel::new(vec![s0], mu, r, vec![vec![sigma]], grid)
    }

    pub fn dim(&self) -> usize {
        self.s0.len()
    }

    pub fn s0(&self) -> &[f64] {
        &self.s0
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn vol(&self, a: usize, b: usize) -> f64 {
        self.vol[a * self.dim() + b]
    }

    /// Rows of the volatility matrix, row-major.
    pub fn vol_matrix(&self) -> &[f64] {
        &self.vol
    }

    /// Total variance rate `Σ_j σ_aj²` of asset `a`.
    pub fn total_variance(&self, a: usize) -> f64 {
        let d = self.dim();
        self.vol[a * d..a * d + a + 1].iter().map(|v| v * v).sum()
    }

    pub fn total_vol(&self, a: usize) -> f64 {
        self.total_variance(a).sqrt()
    }

    /// Same model with a different real-world drift.
    pub fn with_mu(&self, mu: f64) -> Self {
        MarketModel { mu, ..self.clone() }
    }

    /// One exact log-space step of length `dt` under `drift`, in place on
    /// `log_s`. `z` is scratch of length `d`.
    fn step<R: Rng + ?Sized>(&self, log_s: &mut [f64], drift: f64, dt: f64, z: &mut [f64], rng: &mut R) {
        let d = self.dim();
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        let sqrt_dt = dt.sqrt();
        for a in 0..d {
            let row = &self.vol[a * d..a * d + a + 1];
            let mut shock = 0.0;
            let mut var = 0.0;
            for (s, zk) in row.iter().zip(z.iter()) {
                shock += s * zk;
                var += s * s;
            }
            log_s[a] += (drift - 0.5 * var) * dt + sqrt_dt * shock;
        }
    }

    /// Fill `out` (`(N - k*) × d`, step-major) with a risk-neutral
    /// continuation from `s_tau`.
    pub(crate) fn fill_conditional<R: Rng + ?Sized>(&self, s_tau: &[f64], out: &mut [f64], rng: &mut R) {
        let d = self.dim();
        let k_star = self.grid.horizon_index();
        let mut log_s: Vec<f64> = s_tau.iter().map(|s| s.ln()).collect();
        let mut z = vec![0.0; d];
        for (row, k) in out.chunks_exact_mut(d).zip(k_star + 1..) {
            self.step(&mut log_s, self.r, self.grid.dt(k), &mut z, rng);
            for (o, l) in row.iter_mut().zip(&log_s) {
                *o = l.exp();
            }
        }
    }

    fn fill_outer<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        let d = self.dim();
        let mut log_s: Vec<f64> = self.s0.iter().map(|s| s.ln()).collect();
        let mut z = vec![0.0; d];
        for (row, k) in out.chunks_exact_mut(d).zip(1..) {
            self.step(&mut log_s, self.mu, self.grid.dt(k), &mut z, rng);
            for (o, l) in row.iter_mut().zip(&log_s) {
                *o = l.exp();
            }
        }
    }

    /// Draws `S_{t_{k*+1}}` from the pooled sampling law: `k*` real-world steps
    /// followed by one risk-neutral step, composed into one lognormal draw.
    fn fill_pooled<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        let d = self.dim();
        let k1 = self.grid.horizon_index() + 1;
        let tau = self.grid.horizon();
        let dt1 = self.grid.dt(k1);
        let mut log_s: Vec<f64> = self.s0.iter().map(|s| s.ln()).collect();
        let mut z = vec![0.0; d];
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        let sqrt_t = (tau + dt1).sqrt();
        for a in 0..d {
            let row = &self.vol[a * d..a * d + a + 1];
            let var: f64 = row.iter().map(|s| s * s).sum();
            let shock: f64 = row.iter().zip(&z).map(|(s, zk)| s * zk).sum();
            log_s[a] += (self.mu - 0.5 * var) * tau + (self.r - 0.5 * var) * dt1 + sqrt_t * shock;
        }
        let (first, rest) = out.split_at_mut(d);
        for (o, l) in first.iter_mut().zip(&log_s) {
            *o = l.exp();
        }
        for (row, k) in rest.chunks_exact_mut(d).zip(k1 + 1..) {
            self.step(&mut log_s, self.r, self.grid.dt(k), &mut z, rng);
            for (o, l) in row.iter_mut().zip(&log_s) {
                *o = l.exp();
            }
        }
    }

    /// Mean of `log S_{t_{k*+1}}` under the pooled sampling law.
    pub fn pooled_log_mean(&self, a: usize) -> f64 {
        let k1 = self.grid.horizon_index() + 1;
        let var = self.total_variance(a);
        self.s0[a].ln()
            + (self.mu - 0.5 * var) * self.grid.horizon()
            + (self.r - 0.5 * var) * self.grid.dt(k1)
    }
}

/// Outer scenario: prices at `t_1..t_{k*}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterScenario {
    prices: Vec<f64>,
    dim: usize,
    /// Substream index the scenario was drawn from.
    pub seed_tag: u64,
}

impl OuterScenario {
    /// Builds a scenario from explicit prices (`k* × d`, step-major).
    pub fn from_prices(prices: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || prices.is_empty() || prices.len() % dim != 0 {
            return Err(Error::InvalidArgument("scenario shape mismatch".into()));
        }
        if prices.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidArgument("scenario prices must be positive".into()));
        }
        Ok(OuterScenario {
            prices,
            dim,
            seed_tag: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `k*`.
    pub fn steps(&self) -> usize {
        self.prices.len() / self.dim
    }

    /// Price at grid index `k ∈ 1..=k*`.
    pub fn price(&self, k: usize, asset: usize) -> f64 {
        self.prices[(k - 1) * self.dim + asset]
    }

    /// Prices at the horizon `t_{k*}`.
    pub fn terminal(&self) -> &[f64] {
        &self.prices[self.prices.len() - self.dim..]
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }
}

/// Inner path: prices at `t_{k*+1}..t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerPath {
    prices: Vec<f64>,
    dim: usize,
}

impl InnerPath {
    pub fn from_prices(prices: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || prices.is_empty() || prices.len() % dim != 0 {
            return Err(Error::InvalidArgument("inner path shape mismatch".into()));
        }
        if prices.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidArgument("inner path prices must be positive".into()));
        }
        Ok(InnerPath { prices, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `N - k*`.
    pub fn steps(&self) -> usize {
        self.prices.len() / self.dim
    }

    /// Price at offset `o ≥ 1` past the horizon, i.e. grid index `k* + o`.
    pub fn price(&self, offset: usize, asset: usize) -> f64 {
        self.prices[(offset - 1) * self.dim + asset]
    }

    /// `S_{t_{k*+1}}`, the only part of the path the likelihood ratio reads.
    pub fn first_point(&self) -> &[f64] {
        &self.prices[..self.dim]
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub(crate) fn prices_mut(&mut self) -> &mut [f64] {
        &mut self.prices
    }
}

fn check_count(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Scenario `index` of `stream`, drawn from substream `index`.
pub fn outer_scenario(model: &MarketModel, stream: &Stream, index: u64) -> OuterScenario {
    let d = model.dim();
    let mut rng = stream.substream(index);
    let mut prices = vec![0.0; model.grid.horizon_index() * d];
    model.fill_outer(&mut prices, &mut rng);
    OuterScenario {
        prices,
        dim: d,
        seed_tag: index,
    }
}

/// `n` i.i.d. real-world scenarios; scenario `i` uses substream `i`.
pub fn simulate_outer(model: &MarketModel, n: usize, stream: &Stream) -> Result<Vec<OuterScenario>> {
    check_count("n", n)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| outer_scenario(model, stream, i))
        .collect())
}

/// `m_prime` risk-neutral continuations of one scenario, drawn sequentially
/// from `rng`.
pub fn simulate_inner_conditional<R: Rng + ?Sized>(
    model: &MarketModel,
    scenario: &OuterScenario,
    m_prime: usize,
    rng: &mut R,
) -> Result<Vec<InnerPath>> {
    check_count("m_prime", m_prime)?;
    let d = model.dim();
    let len = (model.grid.steps() - model.grid.horizon_index()) * d;
    Ok((0..m_prime)
        .map(|_| {
            let mut prices = vec![0.0; len];
            model.fill_conditional(scenario.terminal(), &mut prices, rng);
            InnerPath { prices, dim: d }
        })
        .collect())
}

/// `m` i.i.d. inner paths from the pooled sampling law, independent of any
/// scenario; path `j` uses substream `j`.
pub fn simulate_inner_pooled(model: &MarketModel, m: usize, stream: &Stream) -> Result<Vec<InnerPath>> {
    check_count("m", m)?;
    let d = model.dim();
    let len = (model.grid.steps() - model.grid.horizon_index()) * d;
    Ok((0..m as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream.substream(j);
            let mut path = InnerPath {
                prices: vec![0.0; len],
                dim: d,
            };
            model.fill_pooled(path.prices_mut(), &mut rng);
            path
        })
        .collect())
}
