//! Risk functions `g` applied to the conditional loss, and the smooth
//! indicator used in the indicator variance estimator.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    /// `1{x ≥ x0}`: exceedance probability.
    Indicator,
    /// `(x - x0)⁺`: the CVaR building block.
    HockeyStick,
    /// `(x - x0)²`.
    Quadratic,
}

impl RiskKind {
    pub const ALL: [RiskKind; 3] = [RiskKind::Indicator, RiskKind::HockeyStick, RiskKind::Quadratic];

    pub fn name(&self) -> &'static str {
        match self {
            RiskKind::Indicator => "indicator",
            RiskKind::HockeyStick => "hockey_stick",
            RiskKind::Quadratic => "quadratic",
        }
    }
}

impl std::fmt::Display for RiskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indicator" => Ok(RiskKind::Indicator),
            "hockey_stick" | "hockey-stick" => Ok(RiskKind::HockeyStick),
            "quadratic" => Ok(RiskKind::Quadratic),
            other => Err(Error::InvalidArgument(format!("unknown risk function '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskFunction {
    pub kind: RiskKind,
    pub threshold: f64,
}

impl RiskFunction {
    pub fn new(kind: RiskKind, threshold: f64) -> Self {
        RiskFunction { kind, threshold }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.threshold;
        match self.kind {
            RiskKind::Indicator => {
                if u >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            RiskKind::HockeyStick => u.max(0.0),
            RiskKind::Quadratic => u * u,
        }
    }

    /// `g'(x)`. The hockey-stick derivative is closed at the threshold.
    /// The indicator has no usable derivative; asking for one is a wiring
    /// error in the caller.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        let u = x - self.threshold;
        match self.kind {
            RiskKind::Indicator => Err(Error::Contract(
                "indicator has no derivative; use the smooth indicator".into(),
            )),
            RiskKind::HockeyStick => Ok(if u >= 0.0 { 1.0 } else { 0.0 }),
            RiskKind::Quadratic => Ok(2.0 * u),
        }
    }
}

/// `g_ε(x)`: the indicator of `x ≥ x0` smoothed by integrating the bump
/// `(1 - cos u)/(4π)` on `|u| < 2π`, rescaled to bandwidth `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothIndicator {
    pub threshold: f64,
    pub epsilon: f64,
}

impl SmoothIndicator {
    pub fn new(threshold: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {epsilon}")));
        }
        Ok(SmoothIndicator { threshold, epsilon })
    }

    /// Scaled offset `(x - x0)/ε`, or `None` outside the support.
    fn inside(&self, x: f64) -> Option<f64> {
        let u = (x - self.threshold) / self.epsilon;
        (u.abs() < 2.0 * PI).then_some(u)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.inside(x) {
            Some(u) => ((u - u.sin()) / (4.0 * PI) + 0.5).clamp(0.0, 1.0),
            None if x >= self.threshold => 1.0,
            None => 0.0,
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self.inside(x) {
            Some(u) => (1.0 - u.cos()) / (4.0 * PI * self.epsilon),
            None => 0.0,
        }
    }

    pub fn second(&self, x: f64) -> f64 {
        match self.inside(x) {
            Some(u) => u.sin() / (4.0 * PI * self.epsilon * self.epsilon),
            None => 0.0,
        }
    }
}
