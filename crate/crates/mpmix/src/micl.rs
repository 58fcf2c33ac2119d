//! Exact integrated complete-data likelihood, the MICL criterion, and
//! its alternating partition-step / model-step maximizer.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bic::{enumerate_candidates, Criterion, RankedModel, RankedModels, SearchConfig};
use crate::data::{
    canonical_block_order, Column, DataSet, ModelSpec, MultiPartition,
};
use crate::dist::{
    log_marginal_proportions, log_marginal_variable, BlockStats, PriorHyper, VariablePrior,
};
use crate::error::{Error, Result};
use crate::parallel::map_collect;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiclConfig {
    pub restarts: usize,
    /// Random single-row passes per partition step.
    pub sweeps: usize,
    pub max_alternations: usize,
    pub tol: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MiclConfig {
    fn default() -> Self {
        MiclConfig {
            restarts: 50,
            sweeps: 5,
            max_alternations: 100,
            tol: 1e-8,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiclResult {
    pub spec: ModelSpec,
    pub z_star: MultiPartition,
    /// `ln p(x, z* | m)`.
    pub value: f64,
    /// Evidence after each alternation of the winning restart.
    pub trace: Vec<f64>,
}

/// `ln p(x, z | m)`: label evidence plus per-variable marginals, summed
/// over blocks.
pub fn complete_data_evidence(
    data: &DataSet,
    spec: &ModelSpec,
    z: &MultiPartition,
    prior: &PriorHyper,
) -> Result<f64> {
    if z.n_blocks() != spec.n_blocks() {
        return Err(Error::LengthMismatch(z.n_blocks(), spec.n_blocks()));
    }
    let mut total = 0.0;
    for b in 0..spec.n_blocks() {
        let labels = &z.labels[b];
        if labels.len() != data.n() {
            return Err(Error::LengthMismatch(labels.len(), data.n()));
        }
        total += log_marginal_proportions(labels, spec.components[b], prior.proportion);
        for j in spec.block_vars(b) {
            total +=
                log_marginal_variable(&data.columns[j], labels, spec.components[b], &prior.variables[j])?;
        }
    }
    Ok(total)
}

/// Mutable state of one block during optimization: its columns, labels
/// and sufficient statistics.
struct BlockOpt<'a> {
    cols: Vec<&'a Column>,
    priors: Vec<&'a VariablePrior>,
    g: usize,
    labels: Vec<usize>,
    stats: BlockStats,
}

impl<'a> BlockOpt<'a> {
    fn new(
        data: &'a DataSet,
        prior: &'a PriorHyper,
        vars: &[usize],
        g: usize,
        labels: Vec<usize>,
    ) -> Self {
        let cols: Vec<&Column> = vars.iter().map(|&j| &data.columns[j]).collect();
        let priors: Vec<&VariablePrior> = vars.iter().map(|&j| &prior.variables[j]).collect();
        let stats = BlockStats::from_labels(&cols, &labels, g);
        BlockOpt { cols, priors, g, labels, stats }
    }

    /// Reassign row `i` to the cluster maximizing the block evidence
    /// with all other labels fixed. Returns true if the label changed.
    fn reassign_row(&mut self, i: usize, u: f64) -> bool {
        let old = self.labels[i];
        self.stats.remove_row(&self.cols, i, old);
        let mut base = vec![0.0; self.g];
        for (ci, p) in self.priors.iter().enumerate() {
            for (g, b) in base.iter_mut().enumerate() {
                *b += self.stats.cluster_col_evidence(ci, g, p);
            }
        }
        let mut best = old;
        let mut best_score = f64::NEG_INFINITY;
        for g in 0..self.g {
            self.stats.add_row(&self.cols, i, g);
            let mut score = (self.stats.counts[g] as f64 - 1.0 + u).ln() - base[g];
            for (ci, p) in self.priors.iter().enumerate() {
                score += self.stats.cluster_col_evidence(ci, g, p);
            }
            self.stats.remove_row(&self.cols, i, g);
            // strict improvement required to move off the current label
            let better = if g == old {
                score > best_score - 1e-12
            } else {
                score > best_score + 1e-12
            };
            if better || best_score == f64::NEG_INFINITY {
                best_score = score;
                best = g;
            }
        }
        self.stats.add_row(&self.cols, i, best);
        self.labels[i] = best;
        best != old
    }

    /// `sweeps` random passes of single-row moves; stops early when a
    /// full pass changes nothing. Never decreases the block evidence.
    fn partition_step(&mut self, u: f64, sweeps: usize, rng: &mut impl Rng) {
        if self.g <= 1 {
            return;
        }
        let n = self.labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..sweeps {
            order.shuffle(rng);
            let mut changed = false;
            for &i in &order {
                if self.reassign_row(i, u) {
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
}

/// Single-block partition improvement, exposed for direct use: returns
/// the improved labels.
pub fn partition_step(
    data: &DataSet,
    vars: &[usize],
    labels: &[usize],
    g: usize,
    prior: &PriorHyper,
    sweeps: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut opt = BlockOpt::new(data, prior, vars, g, labels.to_vec());
    opt.partition_step(prior.proportion, sweeps, rng);
    opt.labels
}

/// Model step: each variable moves to the block whose partition explains
/// it best; ties to the smallest block index.
pub fn model_step(data: &DataSet, spec: &ModelSpec, z: &MultiPartition, prior: &PriorHyper) -> Result<Vec<usize>> {
    let b = spec.n_blocks();
    let mut assignment = Vec::with_capacity(data.d());
    for (j, col) in data.columns.iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for bi in 0..b {
            let v = log_marginal_variable(col, &z.labels[bi], spec.components[bi], &prior.variables[j])?;
            if v > best_v + 1e-12 {
                best_v = v;
                best = bi;
            }
        }
        assignment.push(best);
    }
    Ok(assignment)
}

struct MiclRun {
    assignment: Vec<usize>,
    z: Vec<Vec<usize>>,
    value: f64,
    trace: Vec<f64>,
}

fn micl_single_run(
    data: &DataSet,
    components: &[usize],
    prior: &PriorHyper,
    config: &MiclConfig,
    run_seed: u64,
) -> Result<MiclRun> {
    let n = data.n();
    let b = components.len();
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut assignment: Vec<usize> = (0..data.d()).map(|_| rng.gen_range(0..b)).collect();
    let mut z: Vec<Vec<usize>> = components
        .iter()
        .map(|&g| (0..n).map(|_| rng.gen_range(0..g)).collect())
        .collect();
    let mut spec = ModelSpec::new(components.to_vec(), assignment.clone());
    let zp = MultiPartition { labels: z.clone() };
    let mut value = complete_data_evidence(data, &spec, &zp, prior)?;
    let mut trace = vec![value];
    for _ in 0..config.max_alternations {
        // partition step, block by block (warm-started labels)
        for bi in 0..b {
            let vars = spec.block_vars(bi);
            let mut opt = BlockOpt::new(data, prior, &vars, components[bi], std::mem::take(&mut z[bi]));
            opt.partition_step(prior.proportion, config.sweeps, &mut rng);
            z[bi] = opt.labels;
        }
        // model step
        let zp = MultiPartition { labels: z.clone() };
        assignment = model_step(data, &spec, &zp, prior)?;
        spec = ModelSpec::new(components.to_vec(), assignment.clone());
        let v = complete_data_evidence(data, &spec, &zp, prior)?;
        trace.push(v);
        if v - value <= config.tol {
            value = v.max(value);
            break;
        }
        value = v;
    }
    Ok(MiclRun { assignment, z, value, trace })
}

/// Best-of-restarts maximization of the integrated complete-data
/// likelihood for a fixed (B, G). The returned spec keeps the candidate's
/// raw block structure (empty blocks included); `search_micl` collapses
/// them when ranking models.
pub fn optimize_micl(
    data: &DataSet,
    components: &[usize],
    prior: &PriorHyper,
    config: &MiclConfig,
) -> Result<MiclResult> {
    if components.is_empty() || components.iter().any(|&g| g < 1) {
        return Err(Error::InvalidModel("component vector must be non-empty, all >= 1".into()));
    }
    let runs: Vec<Result<MiclRun>> = map_collect(
        (0..config.restarts.max(1)).collect(),
        config.parallel,
        |r| micl_single_run(data, components, prior, config, derive_seed(config.seed, r as u64)),
    );
    let mut best: Option<MiclRun> = None;
    for run in runs.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => run.value > b.value,
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.ok_or(Error::AllRestartsDegenerate)?;
    Ok(MiclResult {
        spec: ModelSpec::new(components.to_vec(), run.assignment),
        z_star: MultiPartition { labels: run.z },
        value: run.value,
        trace: run.trace,
    })
}

/// Drop empty blocks (with their partitions) and canonicalize, keeping
/// the partitions aligned with the relabeled blocks.
fn collapse_result(data: &DataSet, prior: &PriorHyper, res: MiclResult) -> Result<(ModelSpec, MultiPartition, f64)> {
    let keep: Vec<usize> = (0..res.spec.n_blocks())
        .filter(|&bi| !res.spec.block_vars(bi).is_empty())
        .collect();
    let compact = ModelSpec::new(
        keep.iter().map(|&bi| res.spec.components[bi]).collect(),
        res.spec
            .assignment
            .iter()
            .map(|&w| keep.iter().position(|&k| k == w).unwrap())
            .collect(),
    );
    let order = canonical_block_order(&compact);
    let mut relabel = vec![0usize; compact.n_blocks()];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let spec = ModelSpec::new(
        order.iter().map(|&old| compact.components[old]).collect(),
        compact.assignment.iter().map(|&w| relabel[w]).collect(),
    );
    let z = MultiPartition {
        labels: order.iter().map(|&old| res.z_star.labels[keep[old]].clone()).collect(),
    };
    let value = complete_data_evidence(data, &spec, &z, prior)?;
    Ok((spec, z, value))
}

/// Exhaustive MICL search over the same (B, G) grid as the BIC search.
pub fn search_micl(data: &DataSet, prior: &PriorHyper, config: &SearchConfig) -> Result<RankedModels> {
    let micl_cfg = MiclConfig {
        restarts: config.restarts,
        tol: 1e-8,
        seed: config.seed,
        parallel: false,
        ..Default::default()
    };
    let candidates = enumerate_candidates(config.b_max, config.g_max);
    let results: Vec<Result<(ModelSpec, MultiPartition, f64, Vec<f64>)>> = map_collect(
        candidates.into_iter().enumerate().collect(),
        config.parallel,
        |(idx, components)| {
            let cfg = MiclConfig { seed: derive_seed(config.seed, idx as u64), ..micl_cfg.clone() };
            let res = optimize_micl(data, &components, prior, &cfg)?;
            let trace = res.trace.clone();
            let (spec, z, value) = collapse_result(data, prior, res)?;
            Ok((spec, z, value, trace))
        },
    );
    let mut dedup: HashMap<ModelSpec, RankedModel> = HashMap::new();
    for r in results.into_iter().flatten() {
        let (spec, z, value, trace) = r;
        let entry = RankedModel {
            spec: spec.clone(),
            value,
            partitions: z,
            loglik: None,
            theta: None,
            trace: Some(trace),
        };
        match dedup.get(&spec) {
            Some(existing) if existing.value >= entry.value => {}
            _ => {
                dedup.insert(spec, entry);
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
    Ok(RankedModels { criterion: Criterion::Micl, models })
}

/// Exhaustive maximum of the evidence over every (omega, z) for a fixed
/// (B, G). Test oracle; feasible only for tiny instances.
pub fn exhaustive_micl(
    data: &DataSet,
    components: &[usize],
    prior: &PriorHyper,
) -> Result<f64> {
    let d = data.d();
    let n = data.n();
    let b = components.len();
    let mut best = f64::NEG_INFINITY;
    let mut omega = vec![0usize; d];
    loop {
        let spec = ModelSpec::new(components.to_vec(), omega.clone());
        // enumerate all multi-partitions via a per-block odometer
        let mut labels: Vec<Vec<usize>> = components.iter().map(|_| vec![0usize; n]).collect();
        loop {
            let z = MultiPartition { labels: labels.clone() };
            let v = complete_data_evidence(data, &spec, &z, prior)?;
            if v > best {
                best = v;
            }
            if !advance_multi(&mut labels, components) {
                break;
            }
        }
        if !advance(&mut omega, b) {
            break;
        }
    }
    Ok(best)
}

fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

fn advance_multi(labels: &mut [Vec<usize>], components: &[usize]) -> bool {
    for (lb, &g) in labels.iter_mut().zip(components) {
        if advance(lb, g) {
            return true;
        }
    }
    false
}
