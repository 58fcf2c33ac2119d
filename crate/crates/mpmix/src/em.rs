//! Maximum-likelihood EM for a fixed model specification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, DataSet, ModelSpec, MultiPartition};
use crate::dist::{column_evidence_constant, weighted_fit, Params, LN_2PI};
use crate::error::{Error, Result};
use crate::parallel::map_collect;
use crate::seed::derive_seed;

/// Threshold below which a component's total responsibility is treated
/// as degenerate, triggering a restart.
const WEIGHT_FLOOR: f64 = 1e-8;

/// Mixture parameters: per-block proportions and per-(variable,
/// component) univariate margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    /// `weights[b][g]`: mixing proportion of component g in block b.
    pub weights: Vec<Vec<f64>>,
    /// `margins[j][g]`: margin of variable j under component g of its block.
    pub margins: Vec<Vec<Params>>,
}

/// Soft component memberships: one row-stochastic `n x G_b` matrix per
/// block, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    pub t: Vec<Vec<f64>>,
    /// `G_b` per block (the row width of each matrix in `t`).
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { restarts: 20, max_iter: 500, tol: 1e-6, seed: 0, parallel: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub theta: Theta,
    pub loglik: f64,
    pub resp: Responsibilities,
    pub map_z: MultiPartition,
    pub iterations: usize,
    pub converged: bool,
}

/// Add `ln p(x_ij | params)` to `out[i]` for every row, excluding the
/// label-free `-ln(x!)` constant of count columns (restored once per
/// dataset by [`dataset_log_constant`]).
pub(crate) fn accumulate_col_loglik(
    column: &ColumnData,
    params: &Params,
    out: &mut [f64],
) -> Result<()> {
    match (column, params) {
        (ColumnData::Continuous(xs), Params::Gaussian { mean, var }) => {
            if *var <= 0.0 {
                return Err(Error::InvalidParameter(format!("variance {var} <= 0")));
            }
            let c = -0.5 * (LN_2PI + var.ln());
            let inv2v = 1.0 / (2.0 * var);
            for (o, x) in out.iter_mut().zip(xs) {
                *o += c - (x - mean).powi(2) * inv2v;
            }
        }
        (ColumnData::Count(xs), Params::Poisson { rate }) => {
            if *rate <= 0.0 {
                return Err(Error::InvalidParameter(format!("rate {rate} <= 0")));
            }
            let ln_rate = rate.ln();
            for (o, &x) in out.iter_mut().zip(xs) {
                *o += x as f64 * ln_rate - rate;
            }
        }
        (ColumnData::Categorical { codes, .. }, Params::Categorical(p)) => {
            let ln_p: Vec<f64> = p.iter().map(|&q| q.ln()).collect();
            for (o, &c) in out.iter_mut().zip(codes) {
                *o += ln_p[c];
            }
        }
        _ => return Err(Error::InvalidParameter("column/parameter kind mismatch".into())),
    }
    Ok(())
}

/// Sum of the label-free count-column constants dropped by
/// [`accumulate_col_loglik`].
pub(crate) fn dataset_log_constant(data: &DataSet) -> f64 {
    data.columns.iter().map(|c| column_evidence_constant(&c.data)).sum()
}

/// Per-block joint log densities `ln pi_bg + sum_j ln p(x_ij|alpha_jg)`,
/// returned row-major `n x G_b` (count constants excluded).
fn block_joint_loglik(
    data: &DataSet,
    spec: &ModelSpec,
    theta: &Theta,
    b: usize,
) -> Result<Vec<f64>> {
    let n = data.n();
    let g = spec.components[b];
    let mut cols = vec![vec![0.0; n]; g];
    for j in spec.block_vars(b) {
        for (gi, buf) in cols.iter_mut().enumerate() {
            accumulate_col_loglik(&data.columns[j].data, &theta.margins[j][gi], buf)?;
        }
    }
    let mut out = vec![0.0; n * g];
    for gi in 0..g {
        let lw = theta.weights[b][gi].ln();
        let buf = &cols[gi];
        for i in 0..n {
            out[i * g + gi] = lw + buf[i];
        }
    }
    Ok(out)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Observed-data log-likelihood, computed with log-sum-exp.
pub fn observed_loglik(theta: &Theta, spec: &ModelSpec, data: &DataSet) -> Result<f64> {
    let (_, ll) = e_step_inner(theta, spec, data)?;
    Ok(ll)
}

/// E-step: posterior component memberships per block.
pub fn e_step(theta: &Theta, spec: &ModelSpec, data: &DataSet) -> Result<Responsibilities> {
    let (resp, _) = e_step_inner(theta, spec, data)?;
    Ok(resp)
}

/// E-step plus the observed log-likelihood of the same theta.
pub fn e_step_inner(
    theta: &Theta,
    spec: &ModelSpec,
    data: &DataSet,
) -> Result<(Responsibilities, f64)> {
    let n = data.n();
    let mut t = Vec::with_capacity(spec.n_blocks());
    let mut loglik = dataset_log_constant(data);
    for b in 0..spec.n_blocks() {
        let g = spec.components[b];
        let mut joint = block_joint_loglik(data, spec, theta, b)?;
        for i in 0..n {
            let row = &mut joint[i * g..(i + 1) * g];
            let lse = log_sum_exp(row);
            if !lse.is_finite() {
                let vars = spec.block_vars(b);
                return Err(Error::NonFiniteDensity {
                    row: i,
                    variable: data.columns[vars[0]].name.clone(),
                });
            }
            loglik += lse;
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        t.push(joint);
    }
    Ok((Responsibilities { t, components: spec.components.clone() }, loglik))
}

/// M-step: proportions and weighted-MLE margins from responsibilities.
pub fn m_step(resp: &Responsibilities, spec: &ModelSpec, data: &DataSet) -> Result<Theta> {
    let n = data.n();
    let nf = n as f64;
    let mut weights = Vec::with_capacity(spec.n_blocks());
    for (b, tb) in resp.t.iter().enumerate() {
        let g = spec.components[b];
        let mut w = vec![0.0; g];
        for i in 0..n {
            for gi in 0..g {
                w[gi] += tb[i * g + gi];
            }
        }
        for v in w.iter() {
            if *v < WEIGHT_FLOOR {
                return Err(Error::DegenerateComponent(*v));
            }
        }
        weights.push(w.iter().map(|v| v / nf).collect());
    }
    let mut margins = Vec::with_capacity(data.d());
    for (j, col) in data.columns.iter().enumerate() {
        let b = spec.assignment[j];
        let g = spec.components[b];
        let tb = &resp.t[b];
        let mut per_comp = Vec::with_capacity(g);
        for gi in 0..g {
            let w: Vec<f64> = (0..n).map(|i| tb[i * g + gi]).collect();
            per_comp.push(weighted_fit(&col.data, &w)?);
        }
        margins.push(per_comp);
    }
    Ok(Theta { weights, margins })
}

/// MAP hard partition; ties break toward the smallest component index.
pub fn map_partition(resp: &Responsibilities) -> MultiPartition {
    let labels = resp
        .t
        .iter()
        .zip(&resp.components)
        .map(|(tb, &g)| {
            let rows = tb.len() / g;
            (0..rows)
                .map(|i| {
                    let row = &tb[i * g..(i + 1) * g];
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    MultiPartition { labels }
}

fn random_responsibilities(spec: &ModelSpec, n: usize, rng: &mut impl Rng) -> Responsibilities {
    let t = spec
        .components
        .iter()
        .map(|&g| {
            let mut tb = vec![0.0; n * g];
            for i in 0..n {
                let mut sum = 0.0;
                for gi in 0..g {
                    // Dirichlet(1) via normalized Exp(1) draws.
                    let e = -(1.0 - rng.gen::<f64>()).ln();
                    tb[i * g + gi] = e;
                    sum += e;
                }
                for gi in 0..g {
                    tb[i * g + gi] /= sum;
                }
            }
            tb
        })
        .collect();
    Responsibilities { t, components: spec.components.clone() }
}

struct RunOutcome {
    theta: Theta,
    loglik: f64,
    resp: Responsibilities,
    iterations: usize,
    converged: bool,
}

fn single_run(
    data: &DataSet,
    spec: &ModelSpec,
    config: &EmConfig,
    run_seed: u64,
) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let resp0 = random_responsibilities(spec, data.n(), &mut rng);
    let mut theta = m_step(&resp0, spec, data)?;
    let mut prev = f64::NEG_INFINITY;
    let mut resp = resp0;
    let mut loglik = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..config.max_iter {
        let (r, ll) = e_step_inner(&theta, spec, data)?;
        resp = r;
        loglik = ll;
        iterations = it + 1;
        if prev.is_finite() && (ll - prev).abs() <= config.tol {
            converged = true;
            break;
        }
        prev = ll;
        theta = m_step(&resp, spec, data)?;
    }
    Ok(RunOutcome { theta, loglik, resp, iterations, converged })
}

/// Best-of-restarts EM fit. Restarts run concurrently; the winner is the
/// highest log-likelihood with ties broken toward the smallest restart
/// index.
pub fn fit_em(data: &DataSet, spec: &ModelSpec, config: &EmConfig) -> Result<FitResult> {
    crate::data::validate_model(spec, data)?;
    let runs: Vec<Result<RunOutcome>> = map_collect(
        (0..config.restarts.max(1)).collect(),
        config.parallel,
        |r| single_run(data, spec, config, derive_seed(config.seed, r as u64)),
    );
    let mut best: Option<RunOutcome> = None;
    for run in runs.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => run.loglik > b.loglik,
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.ok_or(Error::AllRestartsDegenerate)?;
    let map_z = map_partition(&run.resp);
    Ok(FitResult {
        spec: spec.clone(),
        theta: run.theta,
        loglik: run.loglik,
        resp: run.resp,
        map_z,
        iterations: run.iterations,
        converged: run.converged,
    })
}
