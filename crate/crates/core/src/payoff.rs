//! Instrument payoffs `V_T(X, Y)` (discounted to time 0) and the closed-form
//! horizon values used for benchmarks.
//!
//! Knock-out instruments are not settled by sampling a knock event. The
//! payoff is multiplied by the Brownian-bridge probability that the
//! continuously monitored log-price stays inside the barrier between each pair
//! of adjacent monitoring points, so `H` stays a deterministic function of the
//! path and its conditional mean equals the continuously monitored price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InnerPath, MarketModel, OuterScenario};
use crate::stats::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    EuropeanCall,
    GeometricAsianCall,
    UpOutCall,
    DownOutCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instrument {
    pub kind: InstrumentKind,
    #[serde(default)]
    pub asset: usize,
    pub strike: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<f64>,
    /// Signed position size.
    #[serde(default = "unit")]
    pub quantity: f64,
    /// Years; defaults to the grid maturity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturity: Option<f64>,
    /// Averaging points (Asian) or monitoring intervals (barrier) on
    /// `[0, maturity]`, taken from the master grid by decimation. Defaults to
    /// every master grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

fn unit() -> f64 {
    1.0
}

impl Instrument {
    pub fn european_call(asset: usize, strike: f64) -> Self {
        Instrument {
            kind: InstrumentKind::EuropeanCall,
            asset,
            strike,
            barrier: None,
            quantity: 1.0,
            maturity: None,
            steps: None,
        }
    }

    pub fn geometric_asian_call(asset: usize, strike: f64, steps: usize) -> Self {
        Instrument {
            kind: InstrumentKind::GeometricAsianCall,
            steps: Some(steps),
            ..Instrument::european_call(asset, strike)
        }
    }

    pub fn up_out_call(asset: usize, strike: f64, barrier: f64) -> Self {
        Instrument {
            kind: InstrumentKind::UpOutCall,
            barrier: Some(barrier),
            ..Instrument::european_call(asset, strike)
        }
    }

    pub fn down_out_call(asset: usize, strike: f64, barrier: f64) -> Self {
        Instrument {
            kind: InstrumentKind::DownOutCall,
            barrier: Some(barrier),
            ..Instrument::european_call(asset, strike)
        }
    }

    pub fn with_quantity(mut self, quantity: f64) -> Self {
        self.quantity = quantity;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = Some(steps);
        self
    }

    pub fn direction(&self) -> Option<BarrierDirection> {
        match self.kind {
            InstrumentKind::UpOutCall => Some(BarrierDirection::Up),
            InstrumentKind::DownOutCall => Some(BarrierDirection::Down),
            _ => None,
        }
    }
}

/// Grid data of one instrument, resolved against the master grid.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Schedule {
    pub maturity_index: usize,
    /// Master-grid indices per sub-grid step.
    pub stride: usize,
    /// `e^{-r T_i}`.
    pub discount: f64,
}

impl Schedule {
    /// Sub-grid indices `stride, 2·stride, …, maturity_index`.
    pub fn points(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.maturity_index / self.stride).map(move |l| l * self.stride)
    }

    pub fn count(&self) -> usize {
        self.maturity_index / self.stride
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    model: MarketModel,
    instruments: Vec<Instrument>,
    schedules: Vec<Schedule>,
    /// Instrument indices sorted by asset.
    by_asset: Vec<usize>,
    v0: f64,
}

impl Portfolio {
    pub fn new(model: &MarketModel, instruments: Vec<Instrument>) -> Result<Self> {
        if instruments.is_empty() {
            return Err(Error::InvalidPortfolio("portfolio has no instruments".into()));
        }
        let grid = model.grid();
        let k_star = grid.horizon_index();
        let mut schedules = Vec::with_capacity(instruments.len());
        for (i, inst) in instruments.iter().enumerate() {
            let bad = |msg: String| Error::InvalidPortfolio(format!("instrument {i}: {msg}"));
            if inst.asset >= model.dim() {
                return Err(bad(format!("asset {} out of range (d = {})", inst.asset, model.dim())));
            }
            if !(inst.strike > 0.0) {
                return Err(bad("strike must be positive".into()));
            }
            if !inst.quantity.is_finite() {
                return Err(bad("quantity must be finite".into()));
            }
            match (inst.direction(), inst.barrier) {
                (Some(_), Some(b)) if b > 0.0 && b.is_finite() => {}
                (Some(_), _) => return Err(bad("knock-out instrument needs a positive barrier".into())),
                (None, Some(_)) => return Err(bad("barrier given for a non-barrier instrument".into())),
                (None, None) => {}
            }
            let maturity_index = match inst.maturity {
                None => grid.steps(),
                Some(t) => grid
                    .index_of(t)
                    .ok_or_else(|| bad(format!("maturity {t} is not a grid point")))?,
            };
            if maturity_index <= k_star {
                return Err(bad("maturity must lie after the risk horizon".into()));
            }
            let stride = match (inst.kind, inst.steps) {
                (InstrumentKind::EuropeanCall, _) | (_, None) => 1,
                (_, Some(0)) => return Err(bad("steps must be positive".into())),
                (_, Some(s)) => {
                    if maturity_index % s != 0 {
                        return Err(bad(format!(
                            "{s} steps do not decimate the {maturity_index}-step master grid"
                        )));
                    }
                    maturity_index / s
                }
            };
            if inst.direction().is_some() && k_star % stride != 0 {
                return Err(bad("barrier monitoring grid must contain the risk horizon".into()));
            }
            schedules.push(Schedule {
                maturity_index,
                stride,
                discount: (-model.r() * grid.time(maturity_index)).exp(),
            });
        }
        let mut by_asset: Vec<usize> = (0..instruments.len()).collect();
        by_asset.sort_by_key(|&i| instruments[i].asset);
        let mut p = Portfolio {
            model: model.clone(),
            instruments,
            schedules,
            by_asset,
            v0: 0.0,
        };
        p.v0 = (0..p.instruments.len())
            .map(|i| p.instruments[i].quantity * p.initial_value(i))
            .sum();
        Ok(p)
    }

    pub fn model(&self) -> &MarketModel {
        &self.model
    }

    pub fn instruments(&self) -> &[Instrument] {
        &self.instruments
    }

    pub(crate) fn schedule(&self, i: usize) -> &Schedule {
        &self.schedules[i]
    }

    /// Portfolio value at time 0, `V_0`.
    pub fn initial_value(&self, i: usize) -> f64 {
        let s0 = self.model.s0()[self.instruments[i].asset];
        self.horizon_value_from(i, s0, 0, 0.0)
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// Time-0 value of the instruments written on `asset`.
    pub fn v0_of_asset(&self, asset: usize) -> f64 {
        (0..self.instruments.len())
            .filter(|&i| self.instruments[i].asset == asset)
            .map(|i| self.instruments[i].quantity * self.initial_value(i))
            .sum()
    }

    fn point(&self, x: &OuterScenario, y: &InnerPath, k: usize, asset: usize) -> f64 {
        let k_star = self.model.grid().horizon_index();
        if k == 0 {
            self.model.s0()[asset]
        } else if k <= k_star {
            x.price(k, asset)
        } else {
            y.price(k - k_star, asset)
        }
    }

    /// Log prices of `asset` at master indices `0..=N` along `(X, Y)`.
    fn log_path(&self, x: &OuterScenario, y: &InnerPath, asset: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..=self.model.grid().steps()).map(|k| self.point(x, y, k, asset).ln()));
    }

    fn payoff_on_log_path(&self, i: usize, x: &OuterScenario, y: &InnerPath, logs: &[f64]) -> f64 {
        let inst = &self.instruments[i];
        let sch = &self.schedules[i];
        let a = inst.asset;
        let intrinsic = match inst.kind {
            InstrumentKind::GeometricAsianCall => {
                let log_sum: f64 = sch.points().map(|k| logs[k]).sum();
                ((log_sum / sch.count() as f64).exp() - inst.strike).max(0.0)
            }
            _ => (self.point(x, y, sch.maturity_index, a) - inst.strike).max(0.0),
        };
        if intrinsic == 0.0 {
            return 0.0;
        }
        let survival = match inst.direction() {
            None => 1.0,
            Some(dir) => {
                let grid = self.model.grid();
                let sigma = self.model.total_vol(a);
                let ln_b = inst.barrier.unwrap_or(f64::INFINITY).ln();
                let gap = |l: f64| match dir {
                    BarrierDirection::Up => ln_b - l,
                    BarrierDirection::Down => l - ln_b,
                };
                let mut prev_k = 0;
                let mut prev_gap = gap(logs[0]);
                let mut surv = 1.0;
                for k in sch.points() {
                    let g = gap(logs[k]);
                    surv *= log_gap_survival(prev_gap, g, sigma, grid.time(k) - grid.time(prev_k));
                    if surv == 0.0 {
                        break;
                    }
                    prev_k = k;
                    prev_gap = g;
                }
                surv
            }
        };
        sch.discount * intrinsic * survival
    }

    /// Discounted payoff of instrument `i` for unit quantity.
    pub fn instrument_payoff(&self, i: usize, x: &OuterScenario, y: &InnerPath) -> f64 {
        let mut logs = Vec::new();
        self.log_path(x, y, self.instruments[i].asset, &mut logs);
        self.payoff_on_log_path(i, x, y, &logs)
    }

    /// `V_T(X, Y)`, discounted to time 0.
    pub fn discounted_payoff(&self, x: &OuterScenario, y: &InnerPath) -> f64 {
        let mut logs = Vec::new();
        let mut logs_asset = usize::MAX;
        let mut total = 0.0;
        for &i in &self.by_asset {
            let a = self.instruments[i].asset;
            if a != logs_asset {
                self.log_path(x, y, a, &mut logs);
                logs_asset = a;
            }
            total += self.instruments[i].quantity * self.payoff_on_log_path(i, x, y, &logs);
        }
        total
    }

    /// `H(X, Y) = V_0 - V_T(X, Y)`.
    pub fn loss(&self, x: &OuterScenario, y: &InnerPath) -> f64 {
        self.v0 - self.discounted_payoff(x, y)
    }

    /// Probability that a barrier instrument survived the monitored prefix
    /// `[0, τ]` given the scenario's grid points.
    pub fn prefix_survival(&self, i: usize, x: &OuterScenario) -> f64 {
        let inst = &self.instruments[i];
        let Some(dir) = inst.direction() else {
            return 1.0;
        };
        let sch = &self.schedules[i];
        let grid = self.model.grid();
        let k_star = grid.horizon_index();
        let a = inst.asset;
        let sigma = self.model.total_vol(a);
        let barrier = inst.barrier.unwrap_or(f64::INFINITY);
        let price = |k: usize| if k == 0 { self.model.s0()[a] } else { x.price(k, a) };
        let mut prev_k = 0;
        let mut surv = 1.0;
        for k in sch.points().take_while(|&k| k <= k_star) {
            surv *= bridge_survival(price(prev_k), price(k), barrier, sigma, grid.time(k) - grid.time(prev_k), dir);
            prev_k = k;
        }
        surv
    }

    /// `E[e^{-rT_i} payoff_i | X]` for unit quantity, given the spot `s` at
    /// grid index `k_now` and, for Asians, the sum of log prices at averaging
    /// points up to `k_now`. Barrier prefix survival is not included.
    fn horizon_value_from(&self, i: usize, s: f64, k_now: usize, prefix_log_sum: f64) -> f64 {
        let inst = &self.instruments[i];
        let sch = &self.schedules[i];
        let grid = self.model.grid();
        let r = self.model.r();
        let sigma = self.model.total_vol(inst.asset);
        let t_now = grid.time(k_now);
        let t_rem = grid.time(sch.maturity_index) - t_now;
        let disc_now = (-r * t_now).exp();
        let v = match inst.kind {
            InstrumentKind::EuropeanCall => bs_call(s, inst.strike, r, sigma, t_rem),
            InstrumentKind::UpOutCall => {
                up_and_out_call(s, inst.strike, inst.barrier.unwrap_or(f64::INFINITY), r, sigma, t_rem)
            }
            InstrumentKind::DownOutCall => {
                down_and_out_call(s, inst.strike, inst.barrier.unwrap_or(0.0), r, sigma, t_rem)
            }
            InstrumentKind::GeometricAsianCall => {
                let future: Vec<f64> = sch
                    .points()
                    .filter(|&k| k > k_now)
                    .map(|k| grid.time(k) - t_now)
                    .collect();
                geometric_asian_call(
                    s,
                    inst.strike,
                    r,
                    sigma,
                    sch.count(),
                    prefix_log_sum,
                    &future,
                    t_rem,
                )
            }
        };
        disc_now * v
    }

    /// Closed-form `E[e^{-rT_i} payoff_i | X]` for unit quantity.
    pub fn instrument_horizon_value(&self, i: usize, x: &OuterScenario) -> f64 {
        let inst = &self.instruments[i];
        let sch = &self.schedules[i];
        let k_star = self.model.grid().horizon_index();
        let a = inst.asset;
        let s_tau = x.terminal()[a];
        let prefix_log_sum: f64 = match inst.kind {
            InstrumentKind::GeometricAsianCall => sch
                .points()
                .take_while(|&k| k <= k_star)
                .map(|k| x.price(k, a).ln())
                .sum(),
            _ => 0.0,
        };
        let surv = self.prefix_survival(i, x);
        if surv == 0.0 {
            return 0.0;
        }
        surv * self.horizon_value_from(i, s_tau, k_star, prefix_log_sum)
    }

    /// Exact `L(X) = V_0 - E[V_T | X]`.
    pub fn analytic_loss(&self, x: &OuterScenario) -> f64 {
        let v: f64 = (0..self.instruments.len())
            .map(|i| self.instruments[i].quantity * self.instrument_horizon_value(i, x))
            .sum();
        self.v0 - v
    }
}

/// Probability that a Brownian bridge in log price between `a` and `b` over
/// `dt` stays strictly inside the barrier.
pub fn bridge_survival(a: f64, b: f64, barrier: f64, sigma: f64, dt: f64, direction: BarrierDirection) -> f64 {
    let (la, lb) = match direction {
        BarrierDirection::Up => ((barrier / a).ln(), (barrier / b).ln()),
        BarrierDirection::Down => ((a / barrier).ln(), (b / barrier).ln()),
    };
    log_gap_survival(la, lb, sigma, dt)
}

/// [`bridge_survival`] from the log distances of both endpoints to the
/// barrier (positive inside).
pub(crate) fn log_gap_survival(la: f64, lb: f64, sigma: f64, dt: f64) -> f64 {
    if !(la > 0.0 && lb > 0.0) {
        return 0.0;
    }
    let x = 2.0 * la * lb / (sigma * sigma * dt);
    // 1 - e^{-x} rounds to 1 past this point (and covers x = inf).
    if x > 40.0 {
        1.0
    } else {
        -(-x).exp_m1()
    }
}

fn d1(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt())
}

/// Price of a claim paying `S_T 1{S_T > h}`.
fn asset_or_nothing(s: f64, h: f64, r: f64, sigma: f64, t: f64) -> f64 {
    if h.is_infinite() {
        return 0.0;
    }
    s * normal_cdf(d1(s, h, r, sigma, t))
}

/// Price of a claim paying `1{S_T > h}`.
fn cash_or_nothing(s: f64, h: f64, r: f64, sigma: f64, t: f64) -> f64 {
    if h.is_infinite() {
        return 0.0;
    }
    (-r * t).exp() * normal_cdf(d1(s, h, r, sigma, t) - sigma * t.sqrt())
}

pub fn bs_call(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    asset_or_nothing(s, k, r, sigma, t) - k * cash_or_nothing(s, k, r, sigma, t)
}

/// Reflection-principle price of a knock-out claim whose payoff `f` vanishes
/// outside the barrier: `P_f(s) - (B/s)^{2ν/σ²} P_f(B²/s)`, `ν = r - σ²/2`.
fn reflected(s: f64, barrier: f64, r: f64, sigma: f64, price: impl Fn(f64) -> f64) -> f64 {
    let nu = r - 0.5 * sigma * sigma;
    let image = barrier * barrier / s;
    price(s) - (barrier / s).powf(2.0 * nu / (sigma * sigma)) * price(image)
}

/// Continuously monitored up-and-out call.
pub fn up_and_out_call(s: f64, k: f64, u: f64, r: f64, sigma: f64, t: f64) -> f64 {
    if s >= u || k >= u {
        return 0.0;
    }
    if u.is_infinite() {
        return bs_call(s, k, r, sigma, t);
    }
    let capped_call = |z: f64| {
        asset_or_nothing(z, k, r, sigma, t) - asset_or_nothing(z, u, r, sigma, t)
            - k * (cash_or_nothing(z, k, r, sigma, t) - cash_or_nothing(z, u, r, sigma, t))
    };
    reflected(s, u, r, sigma, capped_call).max(0.0)
}

/// Continuously monitored down-and-out call.
pub fn down_and_out_call(s: f64, k: f64, d: f64, r: f64, sigma: f64, t: f64) -> f64 {
    if s <= d {
        return 0.0;
    }
    if d <= 0.0 {
        return bs_call(s, k, r, sigma, t);
    }
    let h = k.max(d);
    let floored_call =
        |z: f64| asset_or_nothing(z, h, r, sigma, t) - k * cash_or_nothing(z, h, r, sigma, t);
    reflected(s, d, r, sigma, floored_call).max(0.0)
}

/// Geometric Asian call over `count` averaging points, `prefix_log_sum` of
/// which are already fixed; `future` holds the times from now of the
/// remaining points. Undiscounted beyond `t_rem` from now.
#[allow(clippy::too_many_arguments)]
pub fn geometric_asian_call(
    s: f64,
    k: f64,
    r: f64,
    sigma: f64,
    count: usize,
    prefix_log_sum: f64,
    future: &[f64],
    t_rem: f64,
) -> f64 {
    let n = count as f64;
    let nu = r - 0.5 * sigma * sigma;
    let ln_s = s.ln();
    let mean = (prefix_log_sum + future.iter().map(|u| ln_s + nu * u).sum::<f64>()) / n;
    // Σ_{a,b} min(u_a, u_b) over ascending times.
    let len = future.len();
    let cov_sum: f64 = future
        .iter()
        .enumerate()
        .map(|(idx, u)| u * (2.0 * (len - idx) as f64 - 1.0))
        .sum();
    let var = sigma * sigma * cov_sum / (n * n);
    let disc = (-r * t_rem).exp();
    if var <= 0.0 {
        return disc * (mean.exp() - k).max(0.0);
    }
    let sd = var.sqrt();
    let d2 = (mean - k.ln()) / sd;
    disc * ((mean + 0.5 * var).exp() * normal_cdf(d2 + sd) - k * normal_cdf(d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;

    fn barrier_model() -> MarketModel {
        let grid = TimeGrid::uniform(1.0, 200, 12).unwrap();
        MarketModel::single_asset(100.0, 0.08, 0.05, 0.2, grid).unwrap()
    }

    #[test]
    fn bridge_survival_edge_cases() {
        let up = BarrierDirection::Up;
        assert_eq!(bridge_survival(121.0, 100.0, 120.0, 0.2, 0.005, up), 0.0);
        assert_eq!(bridge_survival(100.0, 120.0, 120.0, 0.2, 0.005, up), 0.0);
        assert_eq!(bridge_survival(100.0, 101.0, f64::INFINITY, 0.2, 0.005, up), 1.0);
        assert_eq!(bridge_survival(100.0, 101.0, 1e300, 0.2, 0.005, up), 1.0);
        let down = BarrierDirection::Down;
        assert_eq!(bridge_survival(79.0, 100.0, 80.0, 0.2, 0.005, down), 0.0);
        let s = bridge_survival(81.0, 82.0, 80.0, 0.2, 0.005, down);
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn validation() {
        let model = barrier_model();
        assert!(Portfolio::new(&model, vec![]).is_err());
        assert!(Portfolio::new(&model, vec![Instrument::european_call(1, 100.0)]).is_err());
        assert!(Portfolio::new(&model, vec![Instrument::european_call(0, 0.0)]).is_err());
        let mut no_barrier = Instrument::up_out_call(0, 90.0, 120.0);
        no_barrier.barrier = None;
        assert!(Portfolio::new(&model, vec![no_barrier]).is_err());
        assert!(Portfolio::new(&model, vec![Instrument::geometric_asian_call(0, 100.0, 30)]).is_err());
        assert!(Portfolio::new(&model, vec![Instrument::up_out_call(0, 90.0, 120.0).with_steps(40)]).is_err());
        let mut early = Instrument::european_call(0, 100.0);
        early.maturity = Some(0.05);
        assert!(Portfolio::new(&model, vec![early]).is_err());
        assert!(Portfolio::new(&model, vec![Instrument::geometric_asian_call(0, 100.0, 50)]).is_ok());
    }

    #[test]
    fn european_out_of_the_money_pays_nothing() {
        let model = barrier_model();
        let p = Portfolio::new(&model, vec![Instrument::european_call(0, 100.0)]).unwrap();
        let x = OuterScenario::from_prices(vec![100.0; 12], 1).unwrap();
        let y = InnerPath::from_prices(vec![99.0; 188], 1).unwrap();
        assert_eq!(p.discounted_payoff(&x, &y), 0.0);
        assert_eq!(p.loss(&x, &y), p.v0());
    }

    #[test]
    fn far_barrier_matches_european_on_every_path() {
        let model = barrier_model();
        let p = Portfolio::new(
            &model,
            vec![Instrument::european_call(0, 90.0), Instrument::up_out_call(0, 90.0, 1e12)],
        )
        .unwrap();
        let x = OuterScenario::from_prices((0..12).map(|k| 100.0 + k as f64).collect(), 1).unwrap();
        let y = InnerPath::from_prices((0..188).map(|k| 111.0 + 0.3 * k as f64).collect(), 1).unwrap();
        let e = p.instrument_payoff(0, &x, &y);
        let b = p.instrument_payoff(1, &x, &y);
        assert!((e - b).abs() < 1e-12 * e);
        assert!((p.initial_value(0) - p.initial_value(1)).abs() < 1e-9);
    }

    #[test]
    fn zero_position_has_zero_loss() {
        let model = barrier_model();
        let p = Portfolio::new(
            &model,
            vec![
                Instrument::european_call(0, 90.0).with_quantity(0.0),
                Instrument::down_out_call(0, 90.0, 80.0).with_quantity(0.0),
            ],
        )
        .unwrap();
        let x = OuterScenario::from_prices(vec![104.0; 12], 1).unwrap();
        let y = InnerPath::from_prices(vec![95.0; 188], 1).unwrap();
        assert_eq!(p.loss(&x, &y), 0.0);
        assert_eq!(p.analytic_loss(&x), 0.0);
    }

    #[test]
    fn zero_vol_asian_is_deterministic_path_arithmetic() {
        let grid = TimeGrid::uniform(1.0, 200, 12).unwrap();
        let sigma = 1e-9;
        let model = MarketModel::single_asset(100.0, 0.08, 0.05, sigma, grid.clone()).unwrap();
        let p = Portfolio::new(&model, vec![Instrument::geometric_asian_call(0, 95.0, 50)]).unwrap();
        let tau = grid.horizon();
        let path = |t: f64| {
            if t <= tau {
                100.0 * (0.08 * t).exp()
            } else {
                100.0 * (0.08 * tau + 0.05 * (t - tau)).exp()
            }
        };
        let x = OuterScenario::from_prices((1..=12).map(|k| path(grid.time(k))).collect(), 1).unwrap();
        let y = InnerPath::from_prices((13..=200).map(|k| path(grid.time(k))).collect(), 1).unwrap();
        let log_mean: f64 = (1..=50).map(|l| path(l as f64 / 50.0).ln()).sum::<f64>() / 50.0;
        let expect = (-0.05f64).exp() * (log_mean.exp() - 95.0).max(0.0);
        assert!((p.discounted_payoff(&x, &y) - expect).abs() < 1e-9);
        assert!((p.instrument_horizon_value(0, &x) - expect).abs() < 1e-6);
    }

    #[test]
    fn zero_vol_european_limit() {
        let grid = TimeGrid::uniform(1.0, 200, 12).unwrap();
        let model = MarketModel::single_asset(100.0, 0.08, 0.05, 1e-9, grid).unwrap();
        let p = Portfolio::new(&model, vec![Instrument::european_call(0, 100.0)]).unwrap();
        let x = OuterScenario::from_prices(vec![101.0; 12], 1).unwrap();
        let tau = 0.06;
        let v_tau = (-0.05f64 * (1.0 - tau)).exp() * (101.0 * (0.05f64 * (1.0 - tau)).exp() - 100.0).max(0.0);
        let expect = (-0.05f64 * tau).exp() * v_tau;
        assert!((p.instrument_horizon_value(0, &x) - expect).abs() < 1e-9);
    }

    #[test]
    fn knocked_out_prefix_has_no_value() {
        let model = barrier_model();
        let p = Portfolio::new(&model, vec![Instrument::up_out_call(0, 90.0, 118.0)]).unwrap();
        let mut prices = vec![110.0; 12];
        prices[4] = 119.0;
        let x = OuterScenario::from_prices(prices, 1).unwrap();
        assert_eq!(p.prefix_survival(0, &x), 0.0);
        assert_eq!(p.instrument_horizon_value(0, &x), 0.0);
        assert_eq!(p.analytic_loss(&x), p.v0());
    }

    #[test]
    fn knock_out_parity_and_limits() {
        let (s, k, r, sigma, t) = (100.0, 90.0, 0.05, 0.2, 1.0);
        let c = bs_call(s, k, r, sigma, t);
        assert!((up_and_out_call(s, k, f64::INFINITY, r, sigma, t) - c).abs() < 1e-12);
        assert!((down_and_out_call(s, k, 0.0, r, sigma, t) - c).abs() < 1e-12);
        assert!((up_and_out_call(s, k, 1e6, r, sigma, t) - c).abs() < 1e-9);
        assert!((down_and_out_call(s, k, 1e-6, r, sigma, t) - c).abs() < 1e-9);
        let uo = up_and_out_call(s, k, 120.0, r, sigma, t);
        assert!(uo > 0.0 && uo < c);
        assert!(up_and_out_call(s, k, 118.0, r, sigma, t) < uo);
        let d_out = down_and_out_call(s, k, 80.0, r, sigma, t);
        assert!(d_out > 0.0 && d_out < c);
        // Down-and-in via images for D ≤ K: (D/S)^{2ν/σ²} C(D²/S).
        let nu = r - 0.5 * sigma * sigma;
        let di = (80.0f64 / s).powf(2.0 * nu / (sigma * sigma)) * bs_call(6400.0 / s, k, r, sigma, t);
        assert!((c - d_out - di).abs() < 1e-12);
    }

    #[test]
    fn black_scholes_reference_value() {
        // S=100, K=100, r=5%, σ=20%, T=1.
        let c = bs_call(100.0, 100.0, 0.05, 0.2, 1.0);
        assert!((c - 10.450_583_572_185_565).abs() < 1e-9);
    }
}
