use rand::Rng;
use rand_distr::StandardNormal;

use nested_risk::estimators::*;
use nested_risk::model::{MarketModel, TimeGrid};
use nested_risk::payoff::{Instrument, Portfolio};
use nested_risk::riskfn::{RiskFunction, RiskKind};
use nested_risk::rng::{Domain, ExperimentSeed, Stream};
use nested_risk::stats::{mean, sample_variance};

const ORDER: usize = 4;
const S0: f64 = 100.0;
const LOG_SD: f64 = 0.2;

/// `L(x) = A + B x + C x²`.
const A: f64 = 260.0;
const B: f64 = -4.5;
const C: f64 = 0.02;
const NOISE: f64 = 10.0;
const X0: f64 = 5.0;

fn loss(x: f64) -> f64 {
    A + B * x + C * x * x
}

fn features(x: f64) -> Vec<f64> {
    let mut f = vec![1.0];
    laguerre_features(x / S0, ORDER, &mut f);
    f
}

/// `E[(L(X) - x0)²]` for `X = S0·exp(σZ)`, from lognormal moments.
fn exact_rho() -> f64 {
    let moment = |k: f64| S0.powf(k) * (0.5 * k * k * LOG_SD * LOG_SD).exp();
    let a = A - X0;
    let coeffs = [a * a, 2.0 * a * B, B * B + 2.0 * a * C, 2.0 * B * C, C * C];
    coeffs.iter().enumerate().map(|(k, c)| c * moment(k as f64)).sum()
}

/// `ρ̂ - (1/n) Σ g(L(X_i))`: the second term has mean `ρ`, so this has
/// the estimator's bias with most of the outer sampling noise removed.
fn toy_error(n: usize, rep: u64) -> f64 {
    let mut rng = Stream::new(31, Domain::Validation, rep).substream(0);
    let mut rows = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut exact = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let x = S0 * (LOG_SD * z).exp();
        rows.push(features(x));
        targets.push(loss(x) + NOISE * e);
        exact.push(loss(x));
    }
    let fit = least_squares(&rows, &targets).unwrap();
    let g = RiskFunction::new(RiskKind::Quadratic, X0);
    let fitted = mean(&rows.iter().map(|r| g.eval(fit.predict(r))).collect::<Vec<_>>());
    fitted - mean(&exact.iter().map(|&l| g.eval(l)).collect::<Vec<_>>())
}

#[test]
fn toy_closed_form_matches_sampling() {
    let mut rng = Stream::new(30, Domain::Validation, 0).substream(0);
    let g = RiskFunction::new(RiskKind::Quadratic, X0);
    let v: Vec<f64> = (0..400_000)
        .map(|_| g.eval(loss(S0 * (LOG_SD * rng.sample::<f64, _>(StandardNormal)).exp())))
        .collect();
    let se = (sample_variance(&v) / v.len() as f64).sqrt();
    assert!((mean(&v) - exact_rho()).abs() <= 4.0 * se, "{} vs {}", mean(&v), exact_rho());
}

#[test]
fn quadratic_toy_bias_vanishes_with_n() {
    let rho = exact_rho();
    let bias = |n: usize, reps: u64| {
        let est: Vec<f64> = (0..reps).map(|r| toy_error(n, r)).collect();
        (mean(&est), (sample_variance(&est) / reps as f64).sqrt())
    };
    let (small, small_se) = bias(100, 400);
    let (large, large_se) = bias(20_000, 60);
    // Fitted-value noise inflates a quadratic risk at small n.
    assert!(small > 3.0 * small_se, "small-n bias {small} (se {small_se})");
    assert!(large.abs() < small.abs() / 5.0, "bias {large} vs {small}");
    assert!(large.abs() <= 3.0 * large_se + 2e-3 * rho, "bias {large} se {large_se} rho {rho}");
}

#[test]
fn noiseless_loss_in_the_basis_is_recovered() {
    let coef = [3.0, -1.0, 0.5, 2.0, 0.0, 1.5];
    let mut rng = Stream::new(32, Domain::Validation, 0).substream(0);
    let xs: Vec<f64> = (0..500).map(|_| S0 * (LOG_SD * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| features(x)).collect();
    let targets: Vec<f64> = rows.iter().map(|r| r.iter().zip(&coef).map(|(a, b)| a * b).sum()).collect();
    let fit = least_squares(&rows, &targets).unwrap();
    let g = RiskFunction::new(RiskKind::HockeyStick, 4.0);
    let est = mean(&rows.iter().map(|r| g.eval(fit.predict(r))).collect::<Vec<_>>());
    let exact = mean(&targets.iter().map(|&t| g.eval(t)).collect::<Vec<_>>());
    assert!((est - exact).abs() < 1e-9 * (1.0 + exact), "{est} vs {exact}");
}

#[test]
fn portfolio_regression_runs_and_counts() {
    let grid = TimeGrid::uniform(1.0, 50, 5).unwrap();
    let model = MarketModel::single_asset(100.0, 0.08, 0.05, 0.2, grid).unwrap();
    let p = Portfolio::new(&model, vec![Instrument::european_call(0, 100.0)]).unwrap();
    let risks = [RiskFunction::new(RiskKind::Quadratic, 0.0)];
    let r = &regression_estimate(&p, &risks, 2000, &RegressionSettings::default(), ExperimentSeed(3), 0).unwrap()[0];
    assert_eq!(r.basis_size, 1 + ORDER + 1);
    assert_eq!(r.rank, r.basis_size);
    assert!(r.rho_hat.is_finite() && r.rho_hat > 0.0);
    assert!(regression_estimate(&p, &risks, 3, &RegressionSettings::default(), ExperimentSeed(3), 0).is_err());
}
