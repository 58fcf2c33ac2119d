//! Univariate component distributions, weighted maximum-likelihood
//! updates, and closed-form conjugate marginal likelihoods.
//!
//! Everything here works in log space via `ln_gamma`; exponentiating the
//! evidences of realistic sample sizes would overflow immediately.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Column, ColumnData, DataSet};
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Variance floor applied when a component's weighted variance collapses.
pub const VAR_FLOOR: f64 = 1e-8;

/// Parameters of one component's univariate margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Params {
    Gaussian { mean: f64, var: f64 },
    Poisson { rate: f64 },
    /// Level probabilities, one per level (covers Bernoulli as m=2).
    Categorical(Vec<f64>),
}

/// A single observed value, matching the column storage.
#[derive(Debug, Clone, Copy)]
pub enum Datum {
    Real(f64),
    Count(u32),
    Level(usize),
}

/// Natural-log density/mass of `value` under `params`.
pub fn log_density(params: &Params, value: Datum) -> Result<f64> {
    match (params, value) {
        (Params::Gaussian { mean, var }, Datum::Real(x)) => {
            if *var <= 0.0 {
                return Err(Error::InvalidParameter(format!("variance {var} <= 0")));
            }
            Ok(-0.5 * (LN_2PI + var.ln()) - (x - mean).powi(2) / (2.0 * var))
        }
        (Params::Poisson { rate }, Datum::Count(k)) => {
            if *rate <= 0.0 {
                return Err(Error::InvalidParameter(format!("rate {rate} <= 0")));
            }
            let kf = k as f64;
            Ok(kf * rate.ln() - rate - ln_gamma(kf + 1.0))
        }
        (Params::Categorical(p), Datum::Level(h)) => {
            let ph = *p
                .get(h)
                .ok_or_else(|| Error::InvalidParameter(format!("level {h} out of range")))?;
            if !(0.0..=1.0).contains(&ph) {
                return Err(Error::InvalidParameter(format!("probability {ph} outside [0,1]")));
            }
            Ok(ph.ln())
        }
        _ => Err(Error::InvalidParameter("value does not match parameter kind".into())),
    }
}

/// Weighted maximum-likelihood fit of one margin:
/// `argmax sum_i w_i ln p(x_i | alpha)`.
pub fn weighted_fit(column: &ColumnData, weights: &[f64]) -> Result<Params> {
    if column.len() != weights.len() {
        return Err(Error::LengthMismatch(column.len(), weights.len()));
    }
    let w: f64 = weights.iter().sum();
    if w <= 0.0 {
        return Err(Error::DegenerateComponent(w));
    }
    match column {
        ColumnData::Continuous(xs) => {
            let mean = xs.iter().zip(weights).map(|(x, t)| x * t).sum::<f64>() / w;
            let var = xs
                .iter()
                .zip(weights)
                .map(|(x, t)| t * (x - mean).powi(2))
                .sum::<f64>()
                / w;
            // Reject variance collapse relative to the column spread:
            // near-zero-variance components are likelihood spikes
            // (the Gaussian mixture likelihood is unbounded there), not
            // genuine clusters.
            let n = xs.len() as f64;
            let col_mean = xs.iter().sum::<f64>() / n;
            let col_var = xs.iter().map(|x| (x - col_mean).powi(2)).sum::<f64>() / n;
            if col_var > 0.0 && var < 1e-4 * col_var {
                return Err(Error::DegenerateComponent(var));
            }
            Ok(Params::Gaussian { mean, var: var.max(VAR_FLOOR) })
        }
        ColumnData::Count(xs) => {
            let rate =
                xs.iter().zip(weights).map(|(&x, t)| x as f64 * t).sum::<f64>() / w;
            Ok(Params::Poisson { rate: rate.max(VAR_FLOOR) })
        }
        ColumnData::Categorical { levels, codes } => {
            let m = levels.len();
            let mut freq = vec![0.0; m];
            for (&c, t) in codes.iter().zip(weights) {
                freq[c] += t;
            }
            for f in freq.iter_mut() {
                *f /= w;
            }
            Ok(Params::Categorical(freq))
        }
    }
}

/// Conjugate hyperparameters: the shared Dirichlet parameter for the
/// proportions and one prior per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorHyper {
    /// Dirichlet hyperparameter `u` for the mixing proportions.
    pub proportion: f64,
    pub variables: Vec<VariablePrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VariablePrior {
    /// Normal-Inverse-Gamma: `sigma^2 ~ IG(a/2, b^2/2)`, `mu | sigma^2 ~ N(c, sigma^2/d)`.
    Gaussian { a: f64, b: f64, c: f64, d: f64 },
    /// `lambda ~ Gamma(a, b)` (rate parameterization).
    Poisson { a: f64, b: f64 },
    /// Symmetric Dirichlet over the level simplex.
    Categorical { a: f64 },
}

impl VariablePrior {
    fn check(&self) -> Result<()> {
        let ok = match self {
            VariablePrior::Gaussian { a, b, c: _, d } => *a > 0.0 && *b > 0.0 && *d > 0.0,
            VariablePrior::Poisson { a, b } => *a > 0.0 && *b > 0.0,
            VariablePrior::Categorical { a } => *a > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("non-positive hyperparameter in {self:?}")))
        }
    }
}

/// Default priors: Jeffreys (1/2) for proportions and categorical
/// parameters; data-driven defaults for the Gaussian and Poisson
/// margins, which the conjugate family needs but Jeffreys does not cover.
pub fn default_priors(data: &DataSet) -> PriorHyper {
    let variables = data
        .columns
        .iter()
        .map(|col| match &col.data {
            ColumnData::Continuous(xs) => {
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                let b = if sd > 1e-6 {
                    sd
                } else {
                    eprintln!(
                        "warning: zero-variance continuous column '{}'; prior scale floored",
                        col.name
                    );
                    1e-6
                };
                VariablePrior::Gaussian { a: 1.0, b, c: mean, d: 1.0 }
            }
            ColumnData::Count(_) => VariablePrior::Poisson { a: 1.0, b: 1.0 },
            ColumnData::Categorical { .. } => VariablePrior::Categorical { a: 0.5 },
        })
        .collect();
    PriorHyper { proportion: 0.5, variables }
}

/// `ln p(z | G)`: Dirichlet-multinomial evidence of a hard partition.
pub fn log_marginal_proportions(labels: &[usize], g: usize, u: f64) -> f64 {
    let n = labels.len() as f64;
    let gf = g as f64;
    let mut counts = vec![0usize; g];
    for &z in labels {
        counts[z] += 1;
    }
    let mut v = ln_gamma(gf * u) - gf * ln_gamma(u) - ln_gamma(n + gf * u);
    for &c in &counts {
        v += ln_gamma(c as f64 + u);
    }
    v
}

/// Per-cluster evidence of a Gaussian column under the
/// Normal-Inverse-Gamma prior, from sufficient statistics.
fn nig_cluster_evidence(n: usize, sum: f64, sumsq: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let xbar = sum / nf;
    let ss = (sumsq - sum * sum / nf).max(0.0);
    let alpha0 = a / 2.0;
    let beta0 = b * b / 2.0;
    let alpha_n = alpha0 + nf / 2.0;
    let kappa_n = d + nf;
    let beta_n = beta0 + 0.5 * ss + d * nf * (xbar - c).powi(2) / (2.0 * kappa_n);
    -0.5 * nf * (2.0 * std::f64::consts::PI).ln() + 0.5 * (d.ln() - kappa_n.ln())
        + ln_gamma(alpha_n)
        - ln_gamma(alpha0)
        + alpha0 * beta0.ln()
        - alpha_n * beta_n.ln()
}

/// Per-cluster evidence of a Poisson column under the Gamma prior,
/// excluding the label-free `-sum ln(x_i!)` data constant.
fn poisson_cluster_evidence(n: usize, sum: u64, a: f64, b: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let big_a = sum as f64 + a;
    // The source formula's "b^2 + n_g" disagrees with the exact
    // Poisson-Gamma integral; b + n_g is what the integral gives.
    let big_b = b + n as f64;
    a * b.ln() - ln_gamma(a) + ln_gamma(big_a) - big_a * big_b.ln()
}

/// Per-cluster evidence of a categorical column under the symmetric
/// Dirichlet prior.
fn categorical_cluster_evidence(counts: &[usize], a: f64) -> f64 {
    let n_g: usize = counts.iter().sum();
    if n_g == 0 {
        return 0.0;
    }
    let m = counts.len() as f64;
    let mut v = ln_gamma(m * a) - m * ln_gamma(a) - ln_gamma(n_g as f64 + m * a);
    for &c in counts {
        v += ln_gamma(c as f64 + a);
    }
    v
}

/// Sufficient statistics of one block: cluster sizes plus per-variable
/// accumulators, supporting O(1) single-row moves.
#[derive(Debug, Clone)]
pub struct BlockStats {
    pub counts: Vec<usize>,
    pub cols: Vec<ColAcc>,
}

#[derive(Debug, Clone)]
pub enum ColAcc {
    Gaussian { sum: Vec<f64>, sumsq: Vec<f64> },
    Poisson { sum: Vec<u64> },
    Categorical { counts: Vec<Vec<usize>>, m: usize },
}

impl BlockStats {
    pub fn new(columns: &[&Column], g: usize) -> Self {
        let cols = columns
            .iter()
            .map(|col| match &col.data {
                ColumnData::Continuous(_) => {
                    ColAcc::Gaussian { sum: vec![0.0; g], sumsq: vec![0.0; g] }
                }
                ColumnData::Count(_) => ColAcc::Poisson { sum: vec![0; g] },
                ColumnData::Categorical { levels, .. } => ColAcc::Categorical {
                    counts: vec![vec![0; levels.len()]; g],
                    m: levels.len(),
                },
            })
            .collect();
        BlockStats { counts: vec![0; g], cols }
    }

    pub fn from_labels(columns: &[&Column], labels: &[usize], g: usize) -> Self {
        let mut stats = Self::new(columns, g);
        for (i, &z) in labels.iter().enumerate() {
            stats.add_row(columns, i, z);
        }
        stats
    }

    pub fn add_row(&mut self, columns: &[&Column], row: usize, g: usize) {
        self.counts[g] += 1;
        for (acc, col) in self.cols.iter_mut().zip(columns) {
            match (acc, &col.data) {
                (ColAcc::Gaussian { sum, sumsq }, ColumnData::Continuous(xs)) => {
                    sum[g] += xs[row];
                    sumsq[g] += xs[row] * xs[row];
                }
                (ColAcc::Poisson { sum }, ColumnData::Count(xs)) => {
                    sum[g] += xs[row] as u64;
                }
                (ColAcc::Categorical { counts, .. }, ColumnData::Categorical { codes, .. }) => {
                    counts[g][codes[row]] += 1;
                }
                _ => unreachable!("accumulator/column kind mismatch"),
            }
        }
    }

    pub fn remove_row(&mut self, columns: &[&Column], row: usize, g: usize) {
        self.counts[g] -= 1;
        for (acc, col) in self.cols.iter_mut().zip(columns) {
            match (acc, &col.data) {
                (ColAcc::Gaussian { sum, sumsq }, ColumnData::Continuous(xs)) => {
                    sum[g] -= xs[row];
                    sumsq[g] -= xs[row] * xs[row];
                }
                (ColAcc::Poisson { sum }, ColumnData::Count(xs)) => {
                    sum[g] -= xs[row] as u64;
                }
                (ColAcc::Categorical { counts, .. }, ColumnData::Categorical { codes, .. }) => {
                    counts[g][codes[row]] -= 1;
                }
                _ => unreachable!("accumulator/column kind mismatch"),
            }
        }
    }

    /// Evidence contribution of cluster `g` for column `ci` (without
    /// label-free data constants).
    pub fn cluster_col_evidence(&self, ci: usize, g: usize, prior: &VariablePrior) -> f64 {
        match (&self.cols[ci], prior) {
            (ColAcc::Gaussian { sum, sumsq }, VariablePrior::Gaussian { a, b, c, d }) => {
                nig_cluster_evidence(self.counts[g], sum[g], sumsq[g], *a, *b, *c, *d)
            }
            (ColAcc::Poisson { sum }, VariablePrior::Poisson { a, b }) => {
                poisson_cluster_evidence(self.counts[g], sum[g], *a, *b)
            }
            (ColAcc::Categorical { counts, .. }, VariablePrior::Categorical { a }) => {
                categorical_cluster_evidence(&counts[g], *a)
            }
            _ => unreachable!("accumulator/prior kind mismatch"),
        }
    }
}

/// Label-free data constant of a column's evidence (`-sum_i ln(x_i!)`
/// for count columns, zero otherwise).
pub fn column_evidence_constant(column: &ColumnData) -> f64 {
    match column {
        ColumnData::Count(xs) => {
            -xs.iter().map(|&x| ln_gamma(x as f64 + 1.0)).sum::<f64>()
        }
        _ => 0.0,
    }
}

/// `ln p(x_j | z, G)`: closed-form marginal likelihood of one column
/// under a hard partition.
pub fn log_marginal_variable(
    column: &Column,
    labels: &[usize],
    g: usize,
    prior: &VariablePrior,
) -> Result<f64> {
    prior.check()?;
    if column.data.len() != labels.len() {
        return Err(Error::LengthMismatch(column.data.len(), labels.len()));
    }
    let cols = [column];
    let stats = BlockStats::from_labels(&cols, labels, g);
    let mut v = column_evidence_constant(&column.data);
    for gi in 0..g {
        v += stats.cluster_col_evidence(0, gi, prior);
    }
    Ok(v)
}
