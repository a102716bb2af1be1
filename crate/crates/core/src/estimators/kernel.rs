//! Row generators for the recycled loss matrix `Ĥ_ij = H(X_i, Y_j) · LR_ij`.

use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodRatioEvaluator, LrMode};
use crate::model::{InnerPath, OuterScenario};
use crate::payoff::{InstrumentKind, Portfolio};

/// Source of the rows of an `n × m` recycled loss matrix.
///
/// Rows and columns may carry integer-like multiplicities, so that a problem
/// with few distinct states can be fed in compressed form. Every statistic
/// is computed as if each row and column were repeated that many times.
pub trait RecyclingKernel: Sync {
    fn rows(&self) -> usize;

    fn cols(&self) -> usize;

    /// Writes `Ĥ_ij` for every `j` into `out`. `scratch` is per-worker
    /// storage the kernel may resize freely.
    fn fill_row(&self, i: usize, out: &mut [f64], scratch: &mut Vec<f64>);

    fn row_weights(&self) -> Option<&[f64]> {
        None
    }

    fn col_weights(&self) -> Option<&[f64]> {
        None
    }

    /// Number of independent likelihood-ratio families (one per asset when
    /// instruments are weighted per asset).
    fn ratio_groups(&self) -> usize {
        0
    }

    /// Likelihood ratios of row `i` in `group`, for diagnostics only.
    fn fill_ratios(&self, _i: usize, _group: usize, _out: &mut [f64]) {}
}

/// Row data of one instrument that varies with the scenario.
struct AsianTerm {
    weight: f64,
    strike: f64,
    /// `exp(Σ_{t_k ≤ τ} log S_k / N)` per scenario is computed per row; per
    /// path we keep `exp(Σ_{t_k > τ} log S_k / N)`.
    path_factor: Vec<f64>,
    row_points: Vec<usize>,
    count: f64,
    asset: usize,
}

struct BarrierTerm {
    weight: f64,
    instrument: usize,
    /// `2 / (σ² Δt)` of the segment that straddles the horizon.
    coef: f64,
    up: bool,
    barrier: f64,
    asset: usize,
    /// Discounted intrinsic value times the survival after the first
    /// monitoring point past the horizon.
    base: Vec<f64>,
    /// Log distance to the barrier at that first point.
    log_gap: Vec<f64>,
    /// Paths with a nonzero base, by increasing `log_gap`.
    order: Vec<u32>,
    sorted_gap: Vec<f64>,
}

/// Beyond this exponent `1 - e^{-x}` rounds to 1.
const SURVIVAL_CUTOFF: f64 = 40.0;

struct Group {
    assets: Vec<usize>,
    v0: f64,
    /// Column terms of the fast ratio, `dim × m`, path-major.
    p: Vec<f64>,
    log_const: Vec<f64>,
    /// Weighted payoffs that do not depend on the scenario: Europeans and
    /// barrier payoffs assuming survival up to the first point past the
    /// horizon.
    static_value: Vec<f64>,
    asians: Vec<AsianTerm>,
    barriers: Vec<BarrierTerm>,
}

/// Recycled loss matrix of a portfolio over a set of scenarios and pooled
/// inner paths.
pub struct PortfolioKernel<'a> {
    portfolio: &'a Portfolio,
    scenarios: &'a [OuterScenario],
    lr: LikelihoodRatioEvaluator,
    mode: LrMode,
    groups: Vec<Group>,
    m: usize,
}

impl<'a> PortfolioKernel<'a> {
    pub fn new(
        portfolio: &'a Portfolio,
        scenarios: &'a [OuterScenario],
        inners: &[InnerPath],
        mode: LrMode,
    ) -> Result<Self> {
        let model = portfolio.model();
        let d = model.dim();
        if scenarios.is_empty() || inners.is_empty() {
            return Err(Error::InvalidArgument("kernel needs scenarios and inner paths".into()));
        }
        let k_star = model.grid().horizon_index();
        let inner_steps = model.grid().steps() - k_star;
        if scenarios.iter().any(|x| x.dim() != d || x.steps() != k_star)
            || inners.iter().any(|y| y.dim() != d || y.steps() != inner_steps)
        {
            return Err(Error::InvalidArgument("paths do not match the model grid".into()));
        }
        let lr = LikelihoodRatioEvaluator::new(model)?;
        let members: Vec<Vec<usize>> = match mode {
            LrMode::Joint => vec![(0..portfolio.instruments().len()).collect()],
            LrMode::PerAsset => (0..d)
                .map(|a| {
                    (0..portfolio.instruments().len())
                        .filter(|&i| portfolio.instruments()[i].asset == a)
                        .collect::<Vec<_>>()
                })
                .collect(),
        };
        let mut groups = Vec::new();
        for (g, insts) in members.into_iter().enumerate() {
            if insts.is_empty() {
                continue;
            }
            let assets = match mode {
                LrMode::Joint => (0..d).collect(),
                LrMode::PerAsset => vec![g],
            };
            groups.push(build_group(portfolio, &lr, mode, assets, &insts, inners));
        }
        Ok(PortfolioKernel {
            portfolio,
            scenarios,
            lr,
            mode,
            groups,
            m: inners.len(),
        })
    }

    fn row_terms(&self, group: &Group, x: &OuterScenario) -> Vec<f64> {
        match self.mode {
            LrMode::Joint => self.lr.joint_row_terms(x.terminal()),
            LrMode::PerAsset => vec![self.lr.asset_row_term(group.assets[0], x.terminal()[group.assets[0]])],
        }
    }

    fn log_ratios(&self, group: &Group, q: &[f64], out: &mut [f64]) {
        let dim = q.len();
        let inv = 1.0 / (2.0 * self.lr.transition_variance_scale());
        for (j, o) in out.iter_mut().enumerate() {
            let p = &group.p[j * dim..(j + 1) * dim];
            let mut dist = 0.0;
            for (pa, qa) in p.iter().zip(q) {
                dist += (pa - qa) * (pa - qa);
            }
            *o = group.log_const[j] - dist * inv;
        }
    }
}

fn build_group(
    portfolio: &Portfolio,
    lr: &LikelihoodRatioEvaluator,
    mode: LrMode,
    assets: Vec<usize>,
    insts: &[usize],
    inners: &[InnerPath],
) -> Group {
    let model = portfolio.model();
    let grid = model.grid();
    let k_star = grid.horizon_index();
    let m = inners.len();
    let dim = assets.len();
    let mut p = Vec::with_capacity(m * dim);
    let mut log_const = Vec::with_capacity(m);
    for y in inners {
        match mode {
            LrMode::Joint => {
                let (pj, c) = lr.joint_col_terms(y.first_point());
                p.extend(pj);
                log_const.push(c);
            }
            LrMode::PerAsset => {
                let a = assets[0];
                let (pj, c) = lr.asset_col_terms(a, y.first_point()[a]);
                p.push(pj);
                log_const.push(c);
            }
        }
    }
    let mut static_value = vec![0.0; m];
    let mut asians = Vec::new();
    let mut barriers = Vec::new();
    let mut v0 = 0.0;
    let inner_steps = grid.steps() - k_star;
    let mut by_asset = insts.to_vec();
    by_asset.sort_by_key(|&i| portfolio.instruments()[i].asset);
    let mut logs: Vec<f64> = Vec::new();
    let mut logs_asset = usize::MAX;
    for &i in &by_asset {
        let inst = &portfolio.instruments()[i];
        let sch = portfolio.schedule(i);
        let a = inst.asset;
        if a != logs_asset {
            logs = inners
                .iter()
                .flat_map(|y| (1..=inner_steps).map(move |o| y.price(o, a).ln()))
                .collect();
            logs_asset = a;
        }
        // Log price of path `j` at master index `k > k*`.
        let lg = |j: usize, k: usize| logs[j * inner_steps + k - k_star - 1];
        v0 += inst.quantity * portfolio.initial_value(i);
        let weight = inst.quantity * sch.discount;
        let intrinsic = |j: usize| (inners[j].price(sch.maturity_index - k_star, a) - inst.strike).max(0.0);
        match inst.kind {
            InstrumentKind::EuropeanCall => {
                for (j, e) in static_value.iter_mut().enumerate() {
                    *e += weight * intrinsic(j);
                }
            }
            InstrumentKind::GeometricAsianCall => {
                let count = sch.count() as f64;
                let path_factor = (0..m)
                    .map(|j| {
                        let s: f64 = sch.points().filter(|&k| k > k_star).map(|k| lg(j, k)).sum();
                        (s / count).exp()
                    })
                    .collect();
                asians.push(AsianTerm {
                    weight,
                    strike: inst.strike,
                    path_factor,
                    row_points: sch.points().take_while(|&k| k <= k_star).collect(),
                    count,
                    asset: a,
                });
            }
            InstrumentKind::UpOutCall | InstrumentKind::DownOutCall => {
                let up = inst.kind == InstrumentKind::UpOutCall;
                let barrier = inst.barrier.unwrap_or(if up { f64::INFINITY } else { 0.0 });
                let sigma = model.total_vol(a);
                let first = k_star + sch.stride;
                let coef = 2.0 / (sigma * sigma * (grid.time(first) - grid.time(k_star)));
                let ln_barrier = barrier.ln();
                let gap = |l: f64| if up { ln_barrier - l } else { l - ln_barrier };
                // Later monitoring points with the coefficient of the segment
                // ending there.
                let mut suffix = Vec::new();
                let mut prev = first;
                for k in sch.points().filter(|&k| k > first) {
                    suffix.push((k, 2.0 / (sigma * sigma * (grid.time(k) - grid.time(prev)))));
                    prev = k;
                }
                let mut base = Vec::with_capacity(m);
                let mut log_gap = Vec::with_capacity(m);
                for j in 0..m {
                    let lb = gap(lg(j, first));
                    if lb <= 0.0 {
                        base.push(0.0);
                        log_gap.push(1.0);
                        continue;
                    }
                    let mut surv = 1.0;
                    let mut prev_gap = lb;
                    for &(k, c) in &suffix {
                        let g = gap(lg(j, k));
                        if g <= 0.0 {
                            surv = 0.0;
                            break;
                        }
                        let x = c * prev_gap * g;
                        if x <= SURVIVAL_CUTOFF {
                            surv *= -(-x).exp_m1();
                        }
                        prev_gap = g;
                    }
                    base.push(intrinsic(j) * surv);
                    log_gap.push(lb);
                }
                for (e, b) in static_value.iter_mut().zip(&base) {
                    *e += weight * b;
                }
                let mut order: Vec<u32> = (0..m as u32).filter(|&j| base[j as usize] > 0.0).collect();
                order.sort_by(|&a, &b| log_gap[a as usize].total_cmp(&log_gap[b as usize]));
                let sorted_gap = order.iter().map(|&j| log_gap[j as usize]).collect();
                barriers.push(BarrierTerm {
                    order,
                    sorted_gap,
                    weight,
                    instrument: i,
                    coef,
                    up,
                    barrier,
                    asset: a,
                    base,
                    log_gap,
                });
            }
        }
    }
    Group {
        assets,
        v0,
        p,
        log_const,
        static_value,
        asians,
        barriers,
    }
}

impl RecyclingKernel for PortfolioKernel<'_> {
    fn rows(&self) -> usize {
        self.scenarios.len()
    }

    fn cols(&self) -> usize {
        self.m
    }

    fn fill_row(&self, i: usize, out: &mut [f64], scratch: &mut Vec<f64>) {
        let x = &self.scenarios[i];
        out.fill(0.0);
        scratch.resize(2 * self.m, 0.0);
        let (h, ratio) = scratch.split_at_mut(self.m);
        for group in &self.groups {
            for (hj, e) in h.iter_mut().zip(&group.static_value) {
                *hj = group.v0 - e;
            }
            for term in &group.asians {
                let log_sum: f64 = term.row_points.iter().map(|&k| x.price(k, term.asset).ln()).sum();
                let row_factor = (log_sum / term.count).exp();
                for (hj, f) in h.iter_mut().zip(&term.path_factor) {
                    *hj -= term.weight * (row_factor * f - term.strike).max(0.0);
                }
            }
            for term in &group.barriers {
                let s_tau = x.terminal()[term.asset];
                let la = if term.up { (term.barrier / s_tau).ln() } else { (s_tau / term.barrier).ln() };
                let prefix = self.portfolio.prefix_survival(term.instrument, x);
                // The static column already holds `weight · base`, i.e. full
                // survival; scenarios that lost some of it add the deficit back.
                let knocked = la <= 0.0 || prefix == 0.0;
                let deficit = if knocked { 1.0 } else { 1.0 - prefix };
                if deficit != 0.0 {
                    let w = term.weight * deficit;
                    for (hj, b) in h.iter_mut().zip(&term.base) {
                        *hj += w * b;
                    }
                }
                if knocked {
                    continue;
                }
                // Straddling-segment survival is 1 - exp(-c·lb); the exponential
                // only matters for paths that start near the barrier.
                let scale = term.weight * prefix;
                let c = term.coef * la;
                let near = term.sorted_gap.partition_point(|&g| c * g <= SURVIVAL_CUTOFF);
                for &j in &term.order[..near] {
                    let j = j as usize;
                    h[j] += scale * term.base[j] * (-c * term.log_gap[j]).exp();
                }
            }
            let q = self.row_terms(group, x);
            if let [q] = q[..] {
                let inv = 1.0 / (2.0 * self.lr.transition_variance_scale());
                for (((o, hj), p), c) in out.iter_mut().zip(h.iter()).zip(&group.p).zip(&group.log_const) {
                    *o += (c - (p - q) * (p - q) * inv).exp() * hj;
                }
            } else {
                self.log_ratios(group, &q, ratio);
                for ((o, hj), lr) in out.iter_mut().zip(h.iter()).zip(ratio.iter()) {
                    *o += lr.exp() * hj;
                }
            }
        }
    }

    fn ratio_groups(&self) -> usize {
        self.groups.len()
    }

    fn fill_ratios(&self, i: usize, group: usize, out: &mut [f64]) {
        let g = &self.groups[group];
        let q = self.row_terms(g, &self.scenarios[i]);
        self.log_ratios(g, &q, out);
        for o in out.iter_mut() {
            *o = o.exp();
        }
    }
}
