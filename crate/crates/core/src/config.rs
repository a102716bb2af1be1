//! TOML experiment configuration.
//!
//! Every section has defaults, so the smallest valid file names only a
//! portfolio. [`ExperimentConfig::to_toml`] writes the effective config with
//! all defaults filled in; loading that output again yields the same value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{GnsSettings, RegressionSettings};
use crate::harness::presets;
use crate::model::{MarketModel, TimeGrid};
use crate::oracle::DiscreteNestedProblem;
use crate::payoff::{Instrument, Portfolio};
use crate::riskfn::RiskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Barrier,
    MultiAsset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Shortcut for one of the reference models. Explicit fields are then
    /// ignored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Assets per group of the multi-asset preset.
    pub group_size: usize,
    /// Within-group correlation of the multi-asset preset.
    pub corr: f64,
    pub s0: Vec<f64>,
    pub mu: f64,
    pub r: f64,
    /// Lower-triangular volatility rows; row `a` has `a + 1` entries.
    pub vol: Vec<Vec<f64>>,
    /// Explicit monitoring times `t_1 < … < t_N`. When empty a uniform grid
    /// of `steps` steps on `[0, maturity]` is used.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
    pub maturity: f64,
    pub steps: usize,
    pub horizon_index: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: None,
            group_size: 4,
            corr: 0.3,
            s0: vec![100.0],
            mu: 0.08,
            r: 0.05,
            vol: vec![vec![0.2]],
            times: Vec::new(),
            maturity: 1.0,
            steps: presets::STEPS,
            horizon_index: presets::HORIZON_INDEX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub instruments: Vec<Instrument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub kinds: Vec<RiskKind>,
    /// Loss quantile used as the threshold `x0`.
    pub quantile: f64,
    /// Fixed threshold; overrides `quantile` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub alpha: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            kinds: RiskKind::ALL.to_vec(),
            quantile: 0.9,
            threshold: None,
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnsConfig {
    /// Sizes of a single `estimate` run.
    pub n: usize,
    pub m: usize,
    /// Study budgets, each run with `m = n`.
    pub budgets: Vec<usize>,
    #[serde(flatten)]
    pub settings: GnsSettings,
}

impl Default for GnsConfig {
    fn default() -> Self {
        GnsConfig {
            n: 10_000,
            m: 10_000,
            budgets: vec![1_000, 10_000, 100_000],
            settings: GnsSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnsConfig {
    pub n: usize,
    pub m_prime: usize,
    /// `[n, m']` pairs of the comparison table.
    pub allocations: Vec<[usize; 2]>,
    /// Budgets of the convergence study, split by the `Γ^{1/3}` rule.
    pub convergence_budgets: Vec<usize>,
}

impl Default for SnsConfig {
    fn default() -> Self {
        SnsConfig {
            n: 100,
            m_prime: 100,
            allocations: vec![[50, 200], [100, 100], [200, 50], [400, 25]],
            convergence_budgets: vec![1_000, 10_000, 100_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub n: usize,
    pub budgets: Vec<usize>,
    #[serde(flatten)]
    pub settings: RegressionSettings,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            n: 10_000,
            budgets: vec![10_000],
            settings: RegressionSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorsConfig {
    pub gns: GnsConfig,
    pub sns: SnsConfig,
    pub regression: RegressionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub n_bench: usize,
    pub macro_reps: usize,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            n_bench: 1_000_000,
            macro_reps: 100,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

/// A tabulated problem; absent tables take the values of the default
/// instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteConfig {
    pub outer_pmf: Vec<f64>,
    pub cond_pmf: Vec<Vec<f64>>,
    pub sampling_pmf: Vec<f64>,
    pub h_table: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        let p = DiscreteNestedProblem::default_instance();
        DiscreteConfig {
            outer_pmf: p.outer_pmf,
            cond_pmf: p.cond_pmf,
            sampling_pmf: p.sampling_pmf,
            h_table: p.h_table,
            threshold: DiscreteNestedProblem::DEFAULT_THRESHOLD,
        }
    }
}

impl DiscreteConfig {
    pub fn problem(&self) -> Result<DiscreteNestedProblem> {
        DiscreteNestedProblem::new(
            self.outer_pmf.clone(),
            self.cond_pmf.clone(),
            self.sampling_pmf.clone(),
            self.h_table.clone(),
        )
        .map_err(|e| Error::config("discrete", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub portfolio: PortfolioConfig,
    pub risk: RiskConfig,
    pub estimators: EstimatorsConfig,
    pub harness: HarnessConfig,
    pub output: OutputConfig,
    /// When present, `estimate` runs on this discrete problem instead of the
    /// market model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteConfig>,
}

fn check(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, message))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" (bytes {}..{})", s.start, s.end)).unwrap_or_default();
            Error::config("<file>", format!("{}{span}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<()> {
        let r = &self.risk;
        check(!r.kinds.is_empty(), "risk.kinds", "at least one risk function is required")?;
        check(r.quantile > 0.0 && r.quantile < 1.0, "risk.quantile", "must lie in (0, 1)")?;
        check(r.alpha > 0.0 && r.alpha < 1.0, "risk.alpha", "must lie in (0, 1)")?;
        if let Some(t) = r.threshold {
            check(t.is_finite(), "risk.threshold", "must be finite")?;
        }
        let e = &self.estimators;
        check(e.gns.n >= 2 && e.gns.m >= 2, "estimators.gns", "n and m must be at least 2")?;
        check(e.gns.budgets.iter().all(|&b| b >= 2), "estimators.gns.budgets", "budgets must be at least 2")?;
        e.gns.settings.validate().map_err(|err| Error::config("estimators.gns", err.to_string()))?;
        check(e.sns.n >= 1 && e.sns.m_prime >= 1, "estimators.sns", "n and m_prime must be positive")?;
        for (i, a) in e.sns.allocations.iter().enumerate() {
            check(a[0] >= 1 && a[1] >= 1, &format!("estimators.sns.allocations[{i}]"), "sizes must be positive")?;
        }
        check(
            e.sns.convergence_budgets.iter().all(|&b| b >= 1),
            "estimators.sns.convergence_budgets",
            "budgets must be positive",
        )?;
        check(e.regression.settings.inner_per_scenario >= 1, "estimators.regression.inner_per_scenario", "must be positive")?;
        check(e.regression.n >= 1, "estimators.regression.n", "must be positive")?;
        check(self.harness.macro_reps >= 1, "harness.macro_reps", "must be positive")?;
        check(self.output.dir.trim().len() > 0, "output.dir", "must not be empty")?;
        if let Some(d) = &self.discrete {
            d.problem()?;
            check(d.threshold.is_finite(), "discrete.threshold", "must be finite")?;
            return Ok(());
        }
        let model = self.model()?;
        self.build_portfolio(&model)?;
        Ok(())
    }

    fn grid(&self) -> Result<TimeGrid> {
        let m = &self.model;
        let k = m.horizon_index;
        if m.times.is_empty() {
            check(m.maturity > 0.0 && m.maturity.is_finite(), "model.maturity", "must be positive")?;
            check(m.steps >= 2, "model.steps", "must be at least 2")?;
            check(k >= 1 && k < m.steps, "model.horizon_index", "must satisfy 1 ≤ k* ≤ N - 1")?;
            TimeGrid::uniform(m.maturity, m.steps, k)
        } else {
            check(k >= 1 && k < m.times.len(), "model.horizon_index", "must satisfy 1 ≤ k* ≤ N - 1")?;
            TimeGrid::new(m.times.clone(), k)
        }
        .map_err(|e| Error::config("model.times", e.to_string()))
    }

    pub fn model(&self) -> Result<MarketModel> {
        let m = &self.model;
        let grid = self.grid()?;
        match m.preset {
            Some(Preset::Barrier) => MarketModel::single_asset(100.0, 0.08, 0.05, 0.2, grid),
            Some(Preset::MultiAsset) => {
                check(m.group_size >= 1, "model.group_size", "must be positive")?;
                let vol = presets::block_vol(3, m.group_size, 0.2, m.corr)
                    .map_err(|e| Error::config("model.corr", e.to_string()))?;
                MarketModel::new(vec![100.0; 3 * m.group_size], 0.08, 0.05, vol, grid)
            }
            None => {
                check(!m.s0.is_empty(), "model.s0", "at least one asset is required")?;
                for (i, s) in m.s0.iter().enumerate() {
                    check(*s > 0.0 && s.is_finite(), &format!("model.s0[{i}]"), "must be positive")?;
                }
                for a in 0..m.s0.len() {
                    let path = format!("model.vol[{a}]");
                    let row = m.vol.get(a).ok_or_else(|| Error::config(&path, "missing volatility row"))?;
                    check(row.len() == a + 1, &path, &format!("row {a} of a lower-triangular matrix needs {} entries", a + 1))?;
                    check(row[a] > 0.0, &format!("{path}[{a}]"), "diagonal must be positive")?;
                }
                check(m.vol.len() == m.s0.len(), "model.vol", "more rows than assets")?;
                MarketModel::new(m.s0.clone(), m.mu, m.r, m.vol.clone(), grid)
            }
        }
        .map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("model", other.to_string()),
        })
    }

    fn build_portfolio(&self, model: &MarketModel) -> Result<Portfolio> {
        let p = &self.portfolio;
        let instruments = match (&p.preset, p.instruments.is_empty()) {
            (Some(_), false) => {
                return Err(Error::config("portfolio", "give either a preset or an instrument list"));
            }
            (Some(Preset::Barrier), true) => presets::barrier_instruments(),
            (Some(Preset::MultiAsset), true) => {
                check(model.dim() % 3 == 0, "portfolio.preset", "multi_asset needs three equal asset groups")?;
                presets::multi_asset_instruments(model.dim() / 3)
            }
            (None, true) => return Err(Error::config("portfolio.instruments", "portfolio has no instruments")),
            (None, false) => p.instruments.clone(),
        };
        Portfolio::new(model, instruments).map_err(|e| Error::config("portfolio", e.to_string()))
    }

    pub fn portfolio(&self) -> Result<Portfolio> {
        self.build_portfolio(&self.model()?)
    }

    pub fn gns_settings(&self) -> GnsSettings {
        GnsSettings {
            alpha: self.risk.alpha,
            ..self.estimators.gns.settings.clone()
        }
    }
}
