//! Finite-state nested problems whose risk measure can be enumerated
//! exactly, used to check the estimators without any model error.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{gns_from_kernel, GnsReport, GnsSettings, RecyclingKernel};
use crate::riskfn::RiskFunction;
use crate::rng::Stream;

const PMF_TOL: f64 = 1e-12;

/// `X` takes values `0..nx` with probabilities `outer_pmf`; given `X = x`,
/// `Y` takes values `0..ny` with probabilities `cond_pmf[x]`. Inner samples
/// for recycling are drawn from `sampling_pmf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteNestedProblem {
    pub outer_pmf: Vec<f64>,
    pub cond_pmf: Vec<Vec<f64>>,
    pub sampling_pmf: Vec<f64>,
    /// `H(x, y)`.
    pub h_table: Vec<Vec<f64>>,
}

fn check_pmf(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be a nonempty nonnegative vector")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PMF_TOL {
        return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteNestedProblem {
    pub fn new(
        outer_pmf: Vec<f64>,
        cond_pmf: Vec<Vec<f64>>,
        sampling_pmf: Vec<f64>,
        h_table: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let p = DiscreteNestedProblem {
            outer_pmf,
            cond_pmf,
            sampling_pmf,
            h_table,
        };
        p.validate()?;
        Ok(p)
    }

    /// Two outer states with `L = 1` and `L = 4` straddling the threshold 2,
    /// three inner states, all probabilities positive.
    pub fn default_instance() -> Self {
        DiscreteNestedProblem {
            outer_pmf: vec![0.5, 0.5],
            cond_pmf: vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5]],
            sampling_pmf: vec![0.35, 0.3, 0.35],
            h_table: vec![vec![0.56, 1.0, 2.1], vec![6.65, 4.0, 2.94]],
        }
    }

    /// Threshold used with [`Self::default_instance`].
    pub const DEFAULT_THRESHOLD: f64 = 2.0;

    pub fn validate(&self) -> Result<()> {
        check_pmf("outer_pmf", &self.outer_pmf)?;
        check_pmf("sampling_pmf", &self.sampling_pmf)?;
        let (nx, ny) = (self.outer_pmf.len(), self.sampling_pmf.len());
        if self.cond_pmf.len() != nx || self.h_table.len() != nx {
            return Err(Error::InvalidArgument("one pmf row and one H row per outer state".into()));
        }
        for x in 0..nx {
            check_pmf(&format!("cond_pmf[{x}]"), &self.cond_pmf[x])?;
            if self.cond_pmf[x].len() != ny || self.h_table[x].len() != ny {
                return Err(Error::InvalidArgument(format!("row {x} does not have {ny} inner states")));
            }
            for y in 0..ny {
                let hf = self.h_table[x][y] * self.cond_pmf[x][y];
                if !hf.is_finite() {
                    return Err(Error::InvalidArgument(format!("H({x}, {y}) is not finite")));
                }
                if self.sampling_pmf[y] == 0.0 && hf != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "sampling law misses inner state {y}, which carries loss under outer state {x}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn outer_states(&self) -> usize {
        self.outer_pmf.len()
    }

    pub fn inner_states(&self) -> usize {
        self.sampling_pmf.len()
    }

    /// `f(y|x) / f̃(y)`, zero where the sampling law has no mass.
    pub fn likelihood_ratio(&self, x: usize, y: usize) -> f64 {
        let s = self.sampling_pmf[y];
        if s == 0.0 {
            0.0
        } else {
            self.cond_pmf[x][y] / s
        }
    }

    /// `Ĥ(x, y) = H(x, y) f(y|x) / f̃(y)`.
    pub fn weighted_loss(&self, x: usize, y: usize) -> f64 {
        self.h_table[x][y] * self.likelihood_ratio(x, y)
    }

    /// `L(x) = Σ_y f(y|x) H(x, y)`.
    pub fn exact_loss(&self, x: usize) -> f64 {
        self.cond_pmf[x].iter().zip(&self.h_table[x]).map(|(p, h)| p * h).sum()
    }

    pub fn exact_rho(&self, g: &RiskFunction) -> f64 {
        (0..self.outer_states())
            .map(|x| self.outer_pmf[x] * g.eval(self.exact_loss(x)))
            .sum()
    }

    /// `Var_f̃[Ĥ(x, Y)]`, the inner variance of the recycled estimator.
    pub fn recycled_variance(&self, x: usize) -> f64 {
        let l = self.exact_loss(x);
        (0..self.inner_states())
            .map(|y| self.sampling_pmf[y] * (self.weighted_loss(x, y) - l).powi(2))
            .sum()
    }
}

/// Multinomial counts by successive binomials.
pub fn multinomial_counts<R: Rng + ?Sized>(total: u64, pmf: &[f64], rng: &mut R) -> Vec<u64> {
    let mut left = total;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(pmf.len());
    for (k, &p) in pmf.iter().enumerate() {
        let c = if k + 1 == pmf.len() || left == 0 {
            left
        } else if p <= 0.0 {
            0
        } else {
            let q = (p / mass).min(1.0);
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out.push(c);
        left -= c;
        mass -= p;
    }
    out
}

/// The recycled matrix of a discrete problem in compressed form: one row per
/// distinct sampled outer state and one column per distinct inner state,
/// weighted by their sample counts.
pub struct DiscreteKernel<'a> {
    problem: &'a DiscreteNestedProblem,
    x_states: Vec<usize>,
    y_states: Vec<usize>,
    row_w: Vec<f64>,
    col_w: Vec<f64>,
}

impl<'a> DiscreteKernel<'a> {
    pub fn from_counts(problem: &'a DiscreteNestedProblem, x_counts: &[u64], y_counts: &[u64]) -> Self {
        let keep = |c: &[u64]| -> (Vec<usize>, Vec<f64>) {
            c.iter().enumerate().filter(|(_, &k)| k > 0).map(|(s, &k)| (s, k as f64)).unzip()
        };
        let (x_states, row_w) = keep(x_counts);
        let (y_states, col_w) = keep(y_counts);
        DiscreteKernel {
            problem,
            x_states,
            y_states,
            row_w,
            col_w,
        }
    }
}

impl RecyclingKernel for DiscreteKernel<'_> {
    fn rows(&self) -> usize {
        self.x_states.len()
    }

    fn cols(&self) -> usize {
        self.y_states.len()
    }

    fn fill_row(&self, i: usize, out: &mut [f64], _scratch: &mut Vec<f64>) {
        let x = self.x_states[i];
        for (o, &y) in out.iter_mut().zip(&self.y_states) {
            *o = self.problem.weighted_loss(x, y);
        }
    }

    fn row_weights(&self) -> Option<&[f64]> {
        Some(&self.row_w)
    }

    fn col_weights(&self) -> Option<&[f64]> {
        Some(&self.col_w)
    }

    fn ratio_groups(&self) -> usize {
        1
    }

    fn fill_ratios(&self, i: usize, _group: usize, out: &mut [f64]) {
        let x = self.x_states[i];
        for (o, &y) in out.iter_mut().zip(&self.y_states) {
            *o = self.problem.likelihood_ratio(x, y);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteEstimator {
    Gns,
    Sns,
}

/// Outer and inner sample counts of one GNS replication. Outer counts use
/// substream 0 of `stream`, inner counts substream 1.
pub fn sample_counts(problem: &DiscreteNestedProblem, n: usize, m: usize, stream: &Stream) -> (Vec<u64>, Vec<u64>) {
    let x = multinomial_counts(n as u64, &problem.outer_pmf, &mut stream.substream(0));
    let y = multinomial_counts(m as u64, &problem.sampling_pmf, &mut stream.substream(1));
    (x, y)
}

/// One GNS replication on the discrete problem.
pub fn sample_gns(
    problem: &DiscreteNestedProblem,
    risks: &[RiskFunction],
    n: usize,
    m: usize,
    settings: &GnsSettings,
    stream: &Stream,
) -> Result<Vec<GnsReport>> {
    problem.validate()?;
    let (x, y) = sample_counts(problem, n, m, stream);
    gns_from_kernel(&DiscreteKernel::from_counts(problem, &x, &y), risks, settings)
}

/// One SNS replication on the discrete problem: `m_prime` conditional inner
/// draws per outer sample.
pub fn sample_sns(
    problem: &DiscreteNestedProblem,
    risks: &[RiskFunction],
    n: usize,
    m_prime: usize,
    stream: &Stream,
) -> Result<Vec<f64>> {
    problem.validate()?;
    if n == 0 || m_prime == 0 {
        return Err(Error::InvalidArgument("SNS needs n, m' ≥ 1".into()));
    }
    let x_counts = multinomial_counts(n as u64, &problem.outer_pmf, &mut stream.substream(0));
    let mut rng = stream.substream(1);
    let mut sums = vec![0.0; risks.len()];
    for (x, &count) in x_counts.iter().enumerate() {
        for _ in 0..count {
            let y = multinomial_counts(m_prime as u64, &problem.cond_pmf[x], &mut rng);
            let l: f64 = y.iter().zip(&problem.h_table[x]).map(|(&c, h)| c as f64 * h).sum::<f64>() / m_prime as f64;
            for (s, g) in sums.iter_mut().zip(risks) {
                *s += g.eval(l);
            }
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

/// Point estimates of one replication by either estimator; `m` is the
/// pooled inner count for GNS and `m'` for SNS.
pub fn sample_problem(
    problem: &DiscreteNestedProblem,
    estimator: DiscreteEstimator,
    risks: &[RiskFunction],
    n: usize,
    m: usize,
    stream: &Stream,
) -> Result<Vec<f64>> {
    match estimator {
        DiscreteEstimator::Gns => Ok(sample_gns(problem, risks, n, m, &GnsSettings::default(), stream)?
            .into_iter()
            .map(|r| r.rho_hat)
            .collect()),
        DiscreteEstimator::Sns => sample_sns(problem, risks, n, m, stream),
    }
}
