//! The two reference portfolios and their models.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{MarketModel, TimeGrid};
use crate::payoff::{Instrument, Portfolio};

pub const STEPS: usize = 200;
pub const HORIZON_INDEX: usize = 12;
pub const ASIAN_STEPS: usize = 50;
pub const STRIKES: [f64; 3] = [90.0, 100.0, 110.0];

pub fn reference_grid() -> TimeGrid {
    TimeGrid::uniform(1.0, STEPS, HORIZON_INDEX).expect("valid reference grid")
}

/// One asset, `S_0 = 100`, `μ = 8%`, `r = 5%`, `σ = 20%`, `τ = 3/50`.
pub fn barrier_model() -> MarketModel {
    MarketModel::single_asset(100.0, 0.08, 0.05, 0.2, reference_grid()).expect("valid barrier model")
}

/// Five long up-and-out calls (`U = 118..122`) and five long down-and-out
/// calls (`D = 78..82`), all struck at 90.
pub fn barrier_instruments() -> Vec<Instrument> {
    let ups = (118..=122).map(|u| Instrument::up_out_call(0, 90.0, u as f64));
    let downs = (78..=82).map(|d| Instrument::down_out_call(0, 90.0, d as f64));
    ups.chain(downs).collect()
}

pub fn barrier_portfolio() -> Portfolio {
    Portfolio::new(&barrier_model(), barrier_instruments()).expect("valid barrier portfolio")
}

/// Lower-triangular volatility rows for `groups` independent blocks of
/// `group_size` assets, each with volatility `sigma` and pairwise
/// correlation `corr` inside a block.
pub fn block_vol(groups: usize, group_size: usize, sigma: f64, corr: f64) -> Result<Vec<Vec<f64>>> {
    if groups == 0 || group_size == 0 {
        return Err(Error::InvalidModel("need at least one group of one asset".into()));
    }
    let c = DMatrix::from_fn(group_size, group_size, |a, b| if a == b { 1.0 } else { corr });
    let chol = c
        .cholesky()
        .ok_or_else(|| Error::InvalidModel(format!("correlation {corr} is not positive definite")))?;
    let l = chol.l();
    let d = groups * group_size;
    Ok((0..d)
        .map(|a| {
            let (g, local) = (a / group_size, a % group_size);
            let mut row = vec![0.0; a + 1];
            for b in 0..=local {
                row[g * group_size + b] = sigma * l[(local, b)];
            }
            row
        })
        .collect())
}

/// Three groups of `group_size` assets each, independent across groups.
pub fn multi_asset_model(group_size: usize, corr: f64) -> Result<MarketModel> {
    let vol = block_vol(3, group_size, 0.2, corr)?;
    MarketModel::new(vec![100.0; 3 * group_size], 0.08, 0.05, vol, reference_grid())
}

/// Group 1: European calls; group 2: geometric Asian calls on 50 dates;
/// group 3: up-and-out (`U = 120`) and down-and-out (`D = 90`) calls. Three
/// strikes per asset and option type.
pub fn multi_asset_instruments(group_size: usize) -> Vec<Instrument> {
    let mut out = Vec::with_capacity(12 * group_size);
    for a in 0..group_size {
        for k in STRIKES {
            out.push(Instrument::european_call(a, k));
        }
    }
    for a in group_size..2 * group_size {
        for k in STRIKES {
            out.push(Instrument::geometric_asian_call(a, k, ASIAN_STEPS));
        }
    }
    for a in 2 * group_size..3 * group_size {
        for k in STRIKES {
            out.push(Instrument::up_out_call(a, k, 120.0));
        }
        for k in STRIKES {
            out.push(Instrument::down_out_call(a, k, 90.0));
        }
    }
    out
}

pub fn multi_asset_portfolio(group_size: usize, corr: f64) -> Result<Portfolio> {
    Portfolio::new(&multi_asset_model(group_size, corr)?, multi_asset_instruments(group_size))
}
