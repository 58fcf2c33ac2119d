//! BIC computation, the penalized EM that updates the variable-to-block
//! map jointly with the parameters, and exhaustive search over (B, G)
//! grids.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    canonical_block_order, ColumnData, DataSet, ModelSpec, MultiPartition,
};
use crate::dist::{weighted_fit, Params, LN_2PI};
use crate::em::{e_step_inner, m_step, map_partition, EmConfig, FitResult, Theta};
use crate::error::{Error, Result};
use crate::parallel::map_collect;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub b_max: usize,
    pub g_max: usize,
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

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            b_max: 1,
            g_max: 1,
            restarts: 20,
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Bic,
    Micl,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Criterion::Bic => write!(f, "bic"),
            Criterion::Micl => write!(f, "micl"),
        }
    }
}

/// One search result: canonical spec, criterion value and the hard
/// partitions of the winning fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedModel {
    pub spec: ModelSpec,
    pub value: f64,
    pub partitions: MultiPartition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Theta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

/// Models sorted by decreasing criterion value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedModels {
    pub criterion: Criterion,
    pub models: Vec<RankedModel>,
}

/// Free-parameter count `nu_m`.
pub fn param_count(spec: &ModelSpec, data: &DataSet) -> usize {
    let mixing: usize = spec.components.iter().map(|&g| g - 1).sum();
    let margins: usize = data
        .columns
        .iter()
        .zip(&spec.assignment)
        .map(|(col, &b)| col.kind.free_params() * spec.components[b])
        .sum();
    mixing + margins
}

/// `BIC = loglik - (nu/2) ln n`.
pub fn bic_value(fit: &FitResult, data: &DataSet) -> f64 {
    let nu = param_count(&fit.spec, data) as f64;
    fit.loglik - 0.5 * nu * (data.n() as f64).ln()
}

/// All (B, G) candidates: B in 1..=b_max with non-increasing component
/// vectors (block relabeling makes ordered vectors redundant).
pub fn enumerate_candidates(b_max: usize, g_max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for b in 1..=b_max {
        let mut cur = Vec::with_capacity(b);
        gen_non_increasing(b, g_max, &mut cur, &mut out);
    }
    out
}

fn gen_non_increasing(b: usize, cap: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == b {
        out.push(cur.clone());
        return;
    }
    for g in (1..=cap).rev() {
        cur.push(g);
        gen_non_increasing(b, g, cur, out);
        cur.pop();
    }
}

/// The fit produced by the penalized EM for one (B, G) candidate, after
/// collapsing blocks emptied by M-step1 and canonicalizing.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub spec: ModelSpec,
    pub theta: Theta,
    pub loglik: f64,
    /// `loglik - (nu/2) ln n` of the collapsed spec.
    pub penalized: f64,
    pub map_z: MultiPartition,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after each E-step of the winning restart.
    pub trace: Vec<f64>,
}

/// `sum_i w_i ln p(x_i | params)`, excluding count-column constants
/// (they cancel in every comparison this feeds).
fn weighted_col_loglik(column: &ColumnData, params: &Params, weights: &[f64]) -> f64 {
    match (column, params) {
        (ColumnData::Continuous(xs), Params::Gaussian { mean, var }) => {
            let c = -0.5 * (LN_2PI + var.ln());
            let inv2v = 1.0 / (2.0 * var);
            xs.iter()
                .zip(weights)
                .map(|(x, w)| w * (c - (x - mean).powi(2) * inv2v))
                .sum()
        }
        (ColumnData::Count(xs), Params::Poisson { rate }) => {
            let lr = rate.ln();
            xs.iter()
                .zip(weights)
                .map(|(&x, w)| w * (x as f64 * lr - rate))
                .sum()
        }
        (ColumnData::Categorical { codes, .. }, Params::Categorical(p)) => {
            let ln_p: Vec<f64> = p.iter().map(|&q| if q > 0.0 { q.ln() } else { f64::NEG_INFINITY }).collect();
            codes
                .iter()
                .zip(weights)
                .map(|(&c, w)| if *w > 0.0 { w * ln_p[c] } else { 0.0 })
                .sum()
        }
        _ => f64::NEG_INFINITY,
    }
}

/// M-step1 score of putting variable `j` in block `b`:
/// `sum_g max_alpha Q(alpha | x_j, t_bg) - (nu_j G_b / 2) ln n`.
fn block_score(
    data: &DataSet,
    j: usize,
    tb: &[f64],
    g: usize,
    n: usize,
    ln_n: f64,
) -> f64 {
    let col = &data.columns[j];
    let mut score = 0.0;
    for gi in 0..g {
        let w: Vec<f64> = (0..n).map(|i| tb[i * g + gi]).collect();
        let total: f64 = w.iter().sum();
        if total <= 1e-12 {
            continue; // empty component contributes nothing
        }
        if let Ok(params) = weighted_fit(&col.data, &w) {
            score += weighted_col_loglik(&col.data, &params, &w);
        }
    }
    score - 0.5 * (col.kind.free_params() * g) as f64 * ln_n
}

struct PenalizedRun {
    assignment: Vec<usize>,
    theta: Theta,
    loglik: f64,
    penalized: f64,
    resp: crate::em::Responsibilities,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn penalized_single_run(
    data: &DataSet,
    components: &[usize],
    config: &EmConfig,
    run_seed: u64,
) -> Result<PenalizedRun> {
    let n = data.n();
    let b = components.len();
    let ln_n = (n as f64).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut assignment: Vec<usize> = (0..data.d()).map(|_| rng.gen_range(0..b)).collect();
    let mut spec = ModelSpec::new(components.to_vec(), assignment.clone());
    let resp0 = random_resp(components, n, &mut rng);
    let mut theta = m_step(&resp0, &spec, data)?;
    let mut prev_pen = f64::NEG_INFINITY;
    let mut out_resp = resp0;
    let mut loglik = f64::NEG_INFINITY;
    let mut penalized = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut trace = Vec::new();
    // Variable moves start only once within-block EM under the initial
    // assignment has stabilized: scoring a move against half-formed
    // partitions makes every variable flee to the cheapest block.
    let mut warmed = false;
    for it in 0..config.max_iter {
        // E-step under the current (omega, theta).
        let (resp, ll) = e_step_inner(&theta, &spec, data)?;
        loglik = ll;
        penalized = ll - 0.5 * param_count(&spec, data) as f64 * ln_n;
        trace.push(penalized);
        out_resp = resp;
        iterations = it + 1;
        let stalled =
            prev_pen.is_finite() && (penalized - prev_pen).abs() <= config.tol;
        if warmed && stalled {
            converged = true;
            break;
        }
        prev_pen = penalized;
        if !warmed {
            if stalled || it + 1 == config.max_iter / 2 {
                warmed = true;
            } else {
                theta = m_step(&out_resp, &spec, data)?;
                continue;
            }
        }
        // M-step1: reassign variables to blocks; ties keep the current
        // block to stop oscillation between equal-score blocks.
        for j in 0..data.d() {
            let cur = assignment[j];
            let mut best_b = cur;
            let mut best_s = block_score(data, j, &out_resp.t[cur], components[cur], n, ln_n);
            for bi in 0..b {
                if bi == cur {
                    continue;
                }
                let s = block_score(data, j, &out_resp.t[bi], components[bi], n, ln_n);
                if s > best_s + 1e-12 || (s > best_s && bi < best_b) {
                    best_s = s;
                    best_b = bi;
                }
            }
            assignment[j] = best_b;
        }
        spec = ModelSpec::new(components.to_vec(), assignment.clone());
        // M-step2: proportions and margins under the new assignment.
        theta = m_step(&out_resp, &spec, data)?;
    }
    Ok(PenalizedRun {
        assignment,
        theta,
        loglik,
        penalized,
        resp: out_resp,
        iterations,
        converged,
        trace,
    })
}

fn random_resp(
    components: &[usize],
    n: usize,
    rng: &mut impl Rng,
) -> crate::em::Responsibilities {
    let t = components
        .iter()
        .map(|&g| {
            let mut tb = vec![0.0; n * g];
            for i in 0..n {
                let mut sum = 0.0;
                for gi in 0..g {
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
    crate::em::Responsibilities { t, components: components.to_vec() }
}

/// Drop empty blocks and put the spec in canonical block order,
/// permuting theta and the responsibilities consistently.
fn collapse_and_canonicalize(
    data: &DataSet,
    components: &[usize],
    run: PenalizedRun,
) -> Result<PenalizedFit> {
    let spec = ModelSpec::new(components.to_vec(), run.assignment.clone());
    let keep: Vec<usize> = (0..components.len())
        .filter(|&bi| spec.block_vars(bi).len() > 0)
        .collect();
    let mut compact = ModelSpec::new(
        keep.iter().map(|&bi| components[bi]).collect(),
        run.assignment
            .iter()
            .map(|&w| keep.iter().position(|&k| k == w).unwrap())
            .collect(),
    );
    let order = canonical_block_order(&compact);
    let mut relabel = vec![0usize; compact.n_blocks()];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    compact = ModelSpec::new(
        order.iter().map(|&old| compact.components[old]).collect(),
        compact.assignment.iter().map(|&w| relabel[w]).collect(),
    );
    // kept old-block index feeding each canonical block
    let source: Vec<usize> = order.iter().map(|&old| keep[old]).collect();
    let weights: Vec<Vec<f64>> = source.iter().map(|&bi| run.theta.weights[bi].clone()).collect();
    let theta = Theta { weights, margins: run.theta.margins };
    let resp = crate::em::Responsibilities {
        t: source.iter().map(|&bi| run.resp.t[bi].clone()).collect(),
        components: compact.components.clone(),
    };
    let map_z = map_partition(&resp);
    let ln_n = (data.n() as f64).ln();
    let penalized = run.loglik - 0.5 * param_count(&compact, data) as f64 * ln_n;
    Ok(PenalizedFit {
        spec: compact,
        theta,
        loglik: run.loglik,
        penalized,
        map_z,
        iterations: run.iterations,
        converged: run.converged,
        trace: run.trace,
    })
}

/// Penalized EM for a fixed (B, G): best of `config.restarts` random
/// starts of the alternating E / M-step1 / M-step2 scheme.
pub fn fit_penalized_em(
    data: &DataSet,
    components: &[usize],
    config: &EmConfig,
) -> Result<PenalizedFit> {
    if components.is_empty() || components.iter().any(|&g| g < 1) {
        return Err(Error::InvalidModel("component vector must be non-empty, all >= 1".into()));
    }
    let runs: Vec<Result<PenalizedRun>> = map_collect(
        (0..config.restarts.max(1)).collect(),
        config.parallel,
        |r| penalized_single_run(data, components, config, derive_seed(config.seed, r as u64)),
    );
    let mut best: Option<PenalizedRun> = None;
    for run in runs.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => run.penalized > b.penalized,
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.ok_or(Error::AllRestartsDegenerate)?;
    collapse_and_canonicalize(data, components, run)
}

/// Exhaustive BIC search over the (B, G) grid. Candidates evaluate
/// concurrently; duplicates arising from empty-block collapse keep their
/// best value.
pub fn search_bic(data: &DataSet, config: &SearchConfig) -> Result<RankedModels> {
    let candidates = enumerate_candidates(config.b_max, config.g_max);
    let fits: Vec<Result<PenalizedFit>> = map_collect(
        candidates.into_iter().enumerate().collect(),
        config.parallel,
        |(idx, components)| {
            let em_cfg = EmConfig {
                restarts: config.restarts,
                max_iter: config.max_iter,
                tol: config.tol,
                seed: derive_seed(config.seed, idx as u64),
                parallel: false, // outer loop already fans out
            };
            fit_penalized_em(data, &components, &em_cfg)
        },
    );
    let mut dedup: HashMap<ModelSpec, RankedModel> = HashMap::new();
    for fit in fits.into_iter().flatten() {
        let entry = RankedModel {
            spec: fit.spec.clone(),
            value: fit.penalized,
            partitions: fit.map_z,
            loglik: Some(fit.loglik),
            theta: Some(fit.theta),
            trace: Some(fit.trace),
        };
        match dedup.get(&fit.spec) {
            Some(existing) if existing.value >= entry.value => {}
            _ => {
                dedup.insert(fit.spec, entry);
            }
        }
    }
    if dedup.is_empty() {
        return Err(Error::AllRestartsDegenerate);
    }
    let mut models: Vec<RankedModel> = dedup.into_values().collect();
    models.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .unwrap()
            .then_with(|| (&a.spec.components, &a.spec.assignment).cmp(&(&b.spec.components, &b.spec.assignment)))
    });
    Ok(RankedModels { criterion: Criterion::Bic, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, VariableKind};
    use crate::em::fit_em;
    use approx::assert_relative_eq;

    fn gaussian_data(cols: Vec<Vec<f64>>) -> DataSet {
        let columns = cols
            .into_iter()
            .enumerate()
            .map(|(j, xs)| Column {
                name: format!("v{j}"),
                kind: VariableKind::Continuous,
                data: ColumnData::Continuous(xs),
            })
            .collect();
        DataSet::new(columns).unwrap()
    }

    #[test]
    fn param_count_examples() {
        let data = gaussian_data(vec![vec![0.0; 3]; 4]);
        let spec = ModelSpec::new(vec![2, 2], vec![0, 0, 1, 1]);
        assert_eq!(param_count(&spec, &data), 18);
        let single = gaussian_data(vec![vec![0.0; 3]]);
        let spec1 = ModelSpec::new(vec![1], vec![0]);
        assert_eq!(param_count(&spec1, &single), 2);
    }

    #[test]
    fn param_count_canonicalization_invariant() {
        let data = gaussian_data(vec![vec![0.0; 3]; 3]);
        let spec = ModelSpec::new(vec![4, 2, 3], vec![2, 0, 1]);
        let canon = crate::data::canonicalize_model(&spec);
        assert_eq!(param_count(&spec, &data), param_count(&canon, &data));
    }

    #[test]
    fn bic_penalty_shape() {
        let data = gaussian_data(vec![vec![0.5]]);
        // n=1: penalty vanishes.
        let spec = ModelSpec::new(vec![1], vec![0]);
        let fit = FitResult {
            spec: spec.clone(),
            theta: Theta {
                weights: vec![vec![1.0]],
                margins: vec![vec![Params::Gaussian { mean: 0.0, var: 1.0 }]],
            },
            loglik: -1.25,
            resp: crate::em::Responsibilities { t: vec![vec![1.0]], components: vec![1] },
            map_z: MultiPartition { labels: vec![vec![0]] },
            iterations: 1,
            converged: true,
        };
        assert_relative_eq!(bic_value(&fit, &data), -1.25, epsilon = 1e-12);
    }

    #[test]
    fn enumerate_candidates_counts() {
        // B=1: 3 vectors, B=2: 6, B=3: 10 for g_max=3.
        let c = enumerate_candidates(3, 3);
        assert_eq!(c.len(), 19);
        assert!(c.iter().all(|v| v.windows(2).all(|w| w[0] >= w[1])));
        let c16 = enumerate_candidates(1, 6);
        assert_eq!(c16.len(), 6);
    }

    #[test]
    fn single_block_reduces_to_fit_em() {
        let mut xs = Vec::new();
        for i in 0..40 {
            xs.push(if i % 2 == 0 { -4.0 + 0.05 * i as f64 } else { 4.0 + 0.05 * i as f64 });
        }
        let data = gaussian_data(vec![xs]);
        let cfg = EmConfig { restarts: 10, seed: 3, ..Default::default() };
        let pen = fit_penalized_em(&data, &[2], &cfg).unwrap();
        let spec = ModelSpec::new(vec![2], vec![0]);
        let em = fit_em(&data, &spec, &cfg).unwrap();
        assert_relative_eq!(pen.loglik, em.loglik, epsilon = 1e-5);
        assert_relative_eq!(pen.penalized, bic_value(&em, &data), epsilon = 1e-5);
    }

    #[test]
    fn all_single_component_blocks_value() {
        let data = gaussian_data(vec![vec![1.0, 2.0, 4.0], vec![-1.0, 0.0, 1.0]]);
        let cfg = EmConfig { restarts: 3, seed: 1, ..Default::default() };
        let pen = fit_penalized_em(&data, &[1, 1], &cfg).unwrap();
        // Expected: per-column marginal MLE loglik minus (nu_j/2) ln n.
        let ln_n = 3f64.ln();
        let mut expected = 0.0;
        for col in &data.columns {
            let w = vec![1.0; 3];
            let p = weighted_fit(&col.data, &w).unwrap();
            expected += weighted_col_loglik(&col.data, &p, &w) - ln_n;
        }
        assert_relative_eq!(pen.penalized, expected, epsilon = 1e-9);
    }

    #[test]
    fn penalized_objective_monotone() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..5u64 {
            let n = 30;
            let cols: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let data = gaussian_data(cols);
            let components = [2usize, 1];
            let ln_n = (n as f64).ln();
            let mut r = ChaCha8Rng::seed_from_u64(trial);
            let mut assignment: Vec<usize> = (0..3).map(|_| r.gen_range(0..2)).collect();
            let mut spec = ModelSpec::new(components.to_vec(), assignment.clone());
            let resp0 = random_resp(&components, n, &mut r);
            let mut theta = m_step(&resp0, &spec, &data).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for _ in 0..25 {
                let (resp, ll) = e_step_inner(&theta, &spec, &data).unwrap();
                let pen = ll - 0.5 * param_count(&spec, &data) as f64 * ln_n;
                assert!(pen >= prev - 1e-8, "penalized objective decreased: {prev} -> {pen}");
                prev = pen;
                for j in 0..3 {
                    let cur = assignment[j];
                    let mut best_b = cur;
                    let mut best_s =
                        block_score(&data, j, &resp.t[cur], components[cur], n, ln_n);
                    for bi in 0..2 {
                        if bi != cur {
                            let s = block_score(&data, j, &resp.t[bi], components[bi], n, ln_n);
                            if s > best_s + 1e-12 {
                                best_s = s;
                                best_b = bi;
                            }
                        }
                    }
                    assignment[j] = best_b;
                }
                spec = ModelSpec::new(components.to_vec(), assignment.clone());
                theta = m_step(&resp, &spec, &data).unwrap();
            }
        }
    }
}
