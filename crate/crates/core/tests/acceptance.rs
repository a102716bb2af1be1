//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use nested_risk::estimators::*;
use nested_risk::harness::*;
use nested_risk::likelihood::{mean_ratio_check, LikelihoodRatioEvaluator};
use nested_risk::model::*;
use nested_risk::oracle::{sample_problem, DiscreteEstimator, DiscreteNestedProblem};
use nested_risk::payoff::{bridge_survival, BarrierDirection, Instrument, InstrumentKind, Portfolio};
use nested_risk::riskfn::{RiskFunction, RiskKind, SmoothIndicator};
use nested_risk::rng::{Domain, ExperimentSeed, Stream};
use nested_risk::stats::{mean, population_variance, sample_variance};

const SEED: ExperimentSeed = ExperimentSeed(2024);
const N_BENCH: usize = 1_000_000;
const QUANTILE: f64 = 0.9;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

fn se(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Estimates, variance estimates and coverage flags of one GNS cell, indexed
/// by risk function.
struct GnsCell {
    budget: usize,
    estimates: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    covered: Vec<Vec<bool>>,
}

impl GnsCell {
    fn run(p: &Portfolio, bench: &Benchmark, budget: usize, cell: usize, reps: usize) -> Self {
        let risks = bench.risks();
        let reports = gns_replications(
            p,
            &risks,
            budget,
            &GnsSettings::default(),
            SEED,
            (0..reps).map(|r| replication_tag(cell, r)),
        )
        .expect("GNS replication");
        let k = risks.len();
        let mut out = GnsCell {
            budget,
            estimates: vec![Vec::new(); k],
            variances: vec![Vec::new(); k],
            covered: vec![Vec::new(); k],
        };
        for rep in &reports {
            for (r, g) in rep.iter().enumerate() {
                out.estimates[r].push(g.rho_hat);
                out.variances[r].push(g.sigma_mn_sq_hat);
                out.covered[r].push(g.covers(bench.rho(g.risk.kind)));
            }
        }
        out
    }

    fn first(&self, reps: usize) -> GnsCell {
        GnsCell {
            budget: self.budget,
            estimates: self.estimates.iter().map(|e| e[..reps].to_vec()).collect(),
            variances: self.variances.iter().map(|e| e[..reps].to_vec()).collect(),
            covered: self.covered.iter().map(|e| e[..reps].to_vec()).collect(),
        }
    }

    fn metrics(&self, r: usize, bench: &Benchmark) -> CellMetrics {
        cell_metrics(&self.estimates[r], bench.rho(RiskKind::ALL[r]), Some(&self.covered[r]))
    }
}

fn oracle_exactness() -> Verdict {
    let p = DiscreteNestedProblem::default_instance();
    let risks: Vec<RiskFunction> = RiskKind::ALL
        .iter()
        .map(|&k| RiskFunction::new(k, DiscreteNestedProblem::DEFAULT_THRESHOLD))
        .collect();
    let reps = 10_000;
    let runs: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| sample_problem(&p, DiscreteEstimator::Gns, &risks, 1000, 1000, &SEED.discrete(rep)).unwrap())
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, g) in risks.iter().enumerate() {
        let est: Vec<f64> = runs.iter().map(|v| v[r]).collect();
        let gap = mean(&est) - p.exact_rho(g);
        let z = gap / se(&est);
        pass &= z.abs() <= 3.0;
        parts.push(format!("{} z={z:+.2}", g.kind));
    }
    Verdict::new(pass, parts.join(", "))
}

fn lr_identity() -> Verdict {
    let model = presets::barrier_model();
    let n = 100;
    let m = 100_000;
    let scenarios = simulate_outer(&model, n, &SEED.outer(u64::MAX)).unwrap();
    let inners = simulate_inner_pooled(&model, m, &SEED.pooled_inner(u64::MAX)).unwrap();
    let eval = LikelihoodRatioEvaluator::new(&model).unwrap();
    let value = mean_ratio_check(&eval, &scenarios, &inners).unwrap();
    // Two-sample U-statistic: variance from the row and column means.
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; m];
    for (i, x) in scenarios.iter().enumerate() {
        for (j, y) in inners.iter().enumerate() {
            let w = eval.log_likelihood_ratio(x, y).exp();
            rows[i] += w / m as f64;
            cols[j] += w / n as f64;
        }
    }
    let err = (population_variance(&rows) / n as f64 + population_variance(&cols) / m as f64).sqrt();
    let z = (value - 1.0) / err;
    Verdict::new(z.abs() <= 3.0, format!("mean ratio {value:.5}, se {err:.5}, z={z:+.2}"))
}

fn kind_name(kind: InstrumentKind) -> &'static str {
    match kind {
        InstrumentKind::EuropeanCall => "european",
        InstrumentKind::GeometricAsianCall => "asian",
        InstrumentKind::UpOutCall => "up_out",
        InstrumentKind::DownOutCall => "down_out",
    }
}

/// Per-path values from `paths` draws split into substream chunks.
fn chunked_mc<F>(paths: usize, chunk: usize, f: F) -> Vec<f64>
where
    F: Fn(u64) -> Vec<f64> + Sync + Send,
{
    (0..(paths / chunk) as u64).into_par_iter().flat_map_iter(f).collect()
}

fn pricing_oracles() -> Verdict {
    let paths = 1_000_000;
    let chunk = 10_000;
    let mut pass = true;
    let mut parts = Vec::new();

    // Conditional losses for every instrument kind on a correlated model.
    let model = presets::multi_asset_model(2, 0.3).unwrap();
    let instruments = presets::multi_asset_instruments(2);
    let x = outer_scenario(&model, &SEED.outer(u64::MAX - 1), 0);
    let inner = SEED.conditional_inner(u64::MAX - 1);
    for kind in [
        InstrumentKind::EuropeanCall,
        InstrumentKind::GeometricAsianCall,
        InstrumentKind::UpOutCall,
        InstrumentKind::DownOutCall,
    ] {
        let subset: Vec<Instrument> = instruments.iter().filter(|i| i.kind == kind).cloned().collect();
        let p = Portfolio::new(&model, subset).unwrap();
        let losses = chunked_mc(paths, chunk, |c| {
            let mut rng = inner.substream(c);
            simulate_inner_conditional(&model, &x, chunk, &mut rng)
                .unwrap()
                .iter()
                .map(|y| p.loss(&x, y))
                .collect()
        });
        let exact = p.analytic_loss(&x);
        let z = (mean(&losses) - exact) / se(&losses);
        pass &= z.abs() <= 4.0;
        parts.push(format!("{} z={z:+.2}", kind_name(kind)));
    }

    // Time-0 prices of the barrier book from full risk-neutral paths.
    let book = presets::barrier_portfolio();
    let q_model = book.model().with_mu(book.model().r());
    let q_book = Portfolio::new(&q_model, presets::barrier_instruments()).unwrap();
    let outer = SEED.outer(u64::MAX - 2);
    let inner = SEED.conditional_inner(u64::MAX - 2);
    let k = q_book.instruments().len();
    let payoffs = chunked_mc(paths, chunk, |c| {
        let mut rng = inner.substream(c);
        let mut out = Vec::with_capacity(chunk * k);
        for s in 0..chunk as u64 {
            let x = outer_scenario(&q_model, &outer, c * chunk as u64 + s);
            let y = &simulate_inner_conditional(&q_model, &x, 1, &mut rng).unwrap()[0];
            out.extend((0..k).map(|i| q_book.instrument_payoff(i, &x, y)));
        }
        out
    });
    let mut worst: f64 = 0.0;
    for i in 0..k {
        let v: Vec<f64> = payoffs.iter().skip(i).step_by(k).copied().collect();
        let z = (mean(&v) - book.initial_value(i)) / se(&v);
        worst = worst.max(z.abs());
    }
    pass &= worst <= 3.0;
    parts.push(format!("barrier prices max |z|={worst:.2}"));
    Verdict::new(pass, parts.join(", "))
}

fn mse_rate(cells: &[&GnsCell], bench: &Benchmark) -> Verdict {
    let budgets: Vec<f64> = cells.iter().map(|c| c.budget as f64).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, kind) in RiskKind::ALL.iter().enumerate() {
        let rel: Vec<f64> = cells
            .iter()
            .map(|c| c.metrics(r, bench).mse / bench.rho(*kind).powi(2))
            .collect();
        let slope = fit_loglog_slope(&budgets, &rel).unwrap().slope;
        let range = if *kind == RiskKind::Indicator { -1.35..=-0.65 } else { -1.25..=-0.75 };
        pass &= range.contains(&slope);
        parts.push(format!("{kind} {slope:.3}"));
    }
    Verdict::new(pass, format!("slopes: {}", parts.join(", ")))
}

fn table1_spot_checks(cells: &[&GnsCell], at_1e4: &GnsCell, bench: &Benchmark) -> Verdict {
    let ind = at_1e4.metrics(0, bench).rrmse;
    let quad = at_1e4.metrics(2, bench).rrmse;
    let mut pass = (0.10..=0.19).contains(&ind) && (0.045..=0.09).contains(&quad);
    let mut bias_ok = 0;
    let mut total = 0;
    for c in cells {
        for r in 0..RiskKind::ALL.len() {
            let m = c.metrics(r, bench);
            bias_ok += (m.rel_abs_bias < m.rel_std) as usize;
            total += 1;
        }
    }
    pass &= bias_ok == total;
    Verdict::new(
        pass,
        format!(
            "indicator RRMSE {:.2}%, quadratic RRMSE {:.2}% ({} reps), bias < std in {bias_ok}/{total} cells",
            100.0 * ind,
            100.0 * quad,
            at_1e4.estimates[0].len()
        ),
    )
}

fn coverage(cell: &GnsCell, bench: &Benchmark) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, kind) in RiskKind::ALL.iter().enumerate() {
        let c = cell.metrics(r, bench).coverage.unwrap();
        pass &= (0.84..=0.95).contains(&c);
        parts.push(format!("{kind} {:.1}%", 100.0 * c));
    }
    Verdict::new(pass, format!("{} reps: {}", cell.estimates[0].len(), parts.join(", ")))
}

fn variance_consistency(cell: &GnsCell) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, kind) in RiskKind::ALL.iter().enumerate() {
        let ratio = sample_variance(&cell.estimates[r]) / mean(&cell.variances[r]);
        pass &= (0.7..=1.4).contains(&ratio);
        parts.push(format!("{kind} {ratio:.3}"));
    }
    Verdict::new(pass, format!("var ratio: {}", parts.join(", ")))
}

fn sns_comparison() -> Verdict {
    let p = presets::multi_asset_portfolio(4, 0.3).unwrap();
    let bench = build_benchmark(&p, N_BENCH, QUANTILE, &SEED.benchmark()).unwrap();
    let risks = bench.risks();
    let reps = 100;
    let gns = GnsCell::run(&p, &bench, 10_000, 20, reps);
    let allocations = [(50, 200), (100, 100), (200, 50), (400, 25)];
    let mut best = vec![f64::INFINITY; risks.len()];
    for (a, &(n, m_prime)) in allocations.iter().enumerate() {
        let mut est = vec![Vec::with_capacity(reps); risks.len()];
        for rep in 0..reps {
            let tag = replication_tag(21 + a, rep);
            for (r, s) in sns_estimate(&p, &risks, n, m_prime, SEED, tag).unwrap().iter().enumerate() {
                est[r].push(s.rho_hat);
            }
        }
        for (r, e) in est.iter().enumerate() {
            best[r] = best[r].min(cell_metrics(e, bench.rho(RiskKind::ALL[r]), None).rrmse);
        }
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, kind) in RiskKind::ALL.iter().enumerate() {
        let g = gns.metrics(r, &bench).rrmse;
        pass &= g < best[r];
        parts.push(format!("{kind} GNS {:.1}% vs SNS {:.1}%", 100.0 * g, 100.0 * best[r]));
    }
    Verdict::new(pass, parts.join(", "))
}

fn sns_rate(p: &Portfolio, bench: &Benchmark) -> Verdict {
    let risks = bench.risks();
    let budgets = [1_000usize, 10_000, 100_000];
    let reps = 100;
    let mut rel = vec![Vec::new(); risks.len()];
    for (b, &budget) in budgets.iter().enumerate() {
        let (n, m_prime) = gordy_juneja_allocation(budget).unwrap();
        let mut est = vec![Vec::with_capacity(reps); risks.len()];
        for rep in 0..reps {
            let tag = replication_tag(30 + b, rep);
            for (r, s) in sns_estimate(p, &risks, n, m_prime, SEED, tag).unwrap().iter().enumerate() {
                est[r].push(s.rho_hat);
            }
        }
        for (r, e) in est.iter().enumerate() {
            let rho = bench.rho(RiskKind::ALL[r]);
            rel[r].push(cell_metrics(e, rho, None).mse / (rho * rho));
        }
    }
    let x: Vec<f64> = budgets.iter().map(|&b| b as f64).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, kind) in RiskKind::ALL.iter().enumerate() {
        let slope = fit_loglog_slope(&x, &rel[r]).unwrap().slope;
        pass &= (-0.85..=-0.5).contains(&slope);
        parts.push(format!("{kind} {slope:.3}"));
    }
    Verdict::new(pass, format!("slopes: {}", parts.join(", ")))
}

/// Condensed versions of the property suites in `tests/properties.rs`.
fn property_suites() -> Verdict {
    let mut failures = Vec::new();

    // Smooth indicator: bounds, flat tails, finite differences.
    for &eps in &[0.01, 0.3, 2.0] {
        let g = SmoothIndicator::new(1.5, eps).unwrap();
        for k in -300..=300 {
            let t = k as f64 / 100.0;
            let x = 1.5 + t * 2.0 * PI * eps;
            let v = g.eval(x);
            let ok_bounds = (0.0..=1.0).contains(&v) && g.deriv(x) >= 0.0 && g.deriv(x) <= 1.0 / (2.0 * PI * eps) + 1e-12;
            let ok_tails = (t < 1.0 || (v == 1.0 && g.deriv(x) == 0.0)) && (t > -1.0 || v == 0.0);
            let mut ok_fd = true;
            if t.abs() < 0.95 {
                let h = 1e-5 * eps;
                let d1 = (g.eval(x + h) - g.eval(x - h)) / (2.0 * h);
                let d2 = (g.deriv(x + h) - g.deriv(x - h)) / (2.0 * h);
                ok_fd = (d1 - g.deriv(x)).abs() <= 1e-6 / eps && (d2 - g.second(x)).abs() <= 1e-6 / (eps * eps);
            }
            if !(ok_bounds && ok_tails && ok_fd) {
                failures.push(format!("g_eps at eps={eps}, t={t}"));
                break;
            }
        }
    }

    // Bridge survival against finely monitored bridges, with the discrete
    // monitoring barrier shift.
    let beta = 0.5825971579390106;
    let mut rng = Stream::new(SEED.0, Domain::Validation, 0).substream(0);
    for &(a, b, sigma, dt) in &[(105.0, 110.0, 0.2, 0.05), (115.0, 100.0, 0.3, 0.02), (95.0, 118.0, 0.15, 0.1)] {
        let (barrier, k, paths) = (120.0f64, 400usize, 4000usize);
        let shifted = barrier * (beta * sigma * (dt / k as f64).sqrt()).exp();
        let expect = bridge_survival(a, b, shifted, sigma, dt, BarrierDirection::Up);
        let (la, lb, lu) = (a.ln(), b.ln(), barrier.ln());
        let h = dt / k as f64;
        let mut alive = 0;
        let mut w = vec![0.0; k + 1];
        for _ in 0..paths {
            for j in 1..=k {
                w[j] = w[j - 1] + sigma * h.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            let end = w[k];
            alive += (1..k).all(|j| la + w[j] - (j as f64 / k as f64) * (end - (lb - la)) < lu) as usize;
        }
        let sim = alive as f64 / paths as f64;
        let err = (expect * (1.0 - expect) / paths as f64).sqrt().max(1.0 / paths as f64);
        if (sim - expect).abs() > 4.0 * err + 2e-3 {
            failures.push(format!("bridge ({a}, {b}): sim {sim} vs {expect}"));
        }
    }

    // Determinism under thread-count changes.
    let grid = TimeGrid::uniform(0.5, 20, 4).unwrap();
    let model = MarketModel::single_asset(100.0, 0.08, 0.05, 0.25, grid).unwrap();
    let p = Portfolio::new(
        &model,
        vec![
            Instrument::european_call(0, 95.0),
            Instrument::up_out_call(0, 90.0, 125.0).with_quantity(2.0),
            Instrument::geometric_asian_call(0, 100.0, 10),
        ],
    )
    .unwrap();
    let risks: Vec<RiskFunction> = RiskKind::ALL.iter().map(|&k| RiskFunction::new(k, 1.0)).collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let g: Vec<f64> = gns_estimate(&p, &risks, 400, 300, &GnsSettings::default(), SEED, 1)
                .unwrap()
                .iter()
                .map(|r| r.rho_hat + r.sigma_mn_sq_hat)
                .collect();
            let s: Vec<f64> = sns_estimate(&p, &risks, 100, 5, SEED, 1).unwrap().iter().map(|r| r.rho_hat).collect();
            (g, s)
        })
    };
    let base = run(1);
    for t in [2, 5] {
        let other = run(t);
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !(same(&base.0, &other.0) && same(&base.1, &other.1)) {
            failures.push(format!("{t} threads changed results"));
        }
    }

    // MSE = bias² + variance.
    let mut rng = Stream::new(SEED.0, Domain::Validation, 1).substream(0);
    for _ in 0..200 {
        let len = rng.random_range(2..100);
        let values: Vec<f64> = (0..len).map(|_| rng.random_range(-1e3..1e3)).collect();
        let m = cell_metrics(&values, rng.random_range(1.0..500.0), None);
        if (m.mse - (m.bias * m.bias + m.variance)).abs() > 1e-11 * m.mse.max(1e-300) {
            failures.push("metric decomposition".into());
            break;
        }
    }

    if failures.is_empty() {
        Verdict::new(true, "smooth indicator, bridge survival, thread determinism, metric decomposition")
    } else {
        Verdict::new(false, failures.join("; "))
    }
}

fn report(n: usize, name: &str, start: Instant, v: Verdict, all: &mut bool) {
    *all &= v.pass;
    println!(
        "criterion {n:>2} {name:<28} {}  {}  [{:.1}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    // The test harness passes filter arguments; this target ignores them.
    let mut all = true;

    let t = Instant::now();
    report(1, "oracle exactness", t, oracle_exactness(), &mut all);
    let t = Instant::now();
    report(2, "likelihood ratio identity", t, lr_identity(), &mut all);
    let t = Instant::now();
    report(3, "pricing oracles", t, pricing_oracles(), &mut all);

    let t = Instant::now();
    let p = presets::barrier_portfolio();
    let bench = build_benchmark(&p, N_BENCH, QUANTILE, &SEED.benchmark()).unwrap();
    let c1e3 = GnsCell::run(&p, &bench, 1_000, 0, 100);
    let c3e3 = GnsCell::run(&p, &bench, 3_000, 1, 100);
    let c1e4 = GnsCell::run(&p, &bench, 10_000, 2, 300);
    println!("barrier benchmark x0 = {:.4} and GNS study built [{:.1}s]", bench.x0, t.elapsed().as_secs_f64());

    let t = Instant::now();
    report(4, "GNS MSE rate", t, mse_rate(&[&c1e3, &c3e3, &c1e4.first(100)], &bench), &mut all);
    let t = Instant::now();
    let c1e4_200 = c1e4.first(200);
    report(5, "table 1 spot checks", t, table1_spot_checks(&[&c1e3, &c3e3, &c1e4_200], &c1e4_200, &bench), &mut all);
    let t = Instant::now();
    report(6, "CI coverage", t, coverage(&c1e4, &bench), &mut all);
    let t = Instant::now();
    report(7, "GNS vs SNS at equal budget", t, sns_comparison(), &mut all);
    let t = Instant::now();
    report(8, "SNS rate", t, sns_rate(&p, &bench), &mut all);
    let t = Instant::now();
    report(9, "variance estimator", t, variance_consistency(&c1e4), &mut all);
    let t = Instant::now();
    report(10, "property suites", t, property_suites(), &mut all);

    if !all {
        std::process::exit(1);
    }
}
