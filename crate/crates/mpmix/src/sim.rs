//! Data generators: sampling from a fitted or hand-built model, the
//! three-block Gaussian-copula scenario family, and a benchmark runner
//! that scores structure recovery over replicated draws.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, Poisson};

use crate::bic::{search_bic, Criterion, SearchConfig};
use crate::data::{Column, ColumnData, DataSet, ModelSpec, MultiPartition, VariableKind};
use crate::dist::{default_priors, Params};
use crate::em::Theta;
use crate::error::{Error, Result};
use crate::metrics::{adjusted_rand_index, block_recovery_ari};
use crate::micl::search_micl;
use crate::parallel::map_collect;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Interm,
    Hard,
}

impl Difficulty {
    /// Component separation associated with the tag.
    pub fn delta(self) -> f64 {
        match self {
            Difficulty::Easy => 4.5,
            Difficulty::Interm => 3.0,
            Difficulty::Hard => 1.5,
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Difficulty::Easy => write!(f, "easy"),
            Difficulty::Interm => write!(f, "interm"),
            Difficulty::Hard => write!(f, "hard"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub delta: f64,
    /// Within-component copula correlation.
    pub rho: f64,
    pub replicates: usize,
    pub difficulty: Difficulty,
}

impl SimScenario {
    pub fn new(difficulty: Difficulty, n: usize, rho: f64, replicates: usize) -> Result<Self> {
        let s = SimScenario { n, delta: difficulty.delta(), rho, replicates, difficulty };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("scenario needs n >= 1".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter("copula correlation must be in (-1, 1)".into()));
        }
        if self.replicates < 1 {
            return Err(Error::InvalidParameter("scenario needs replicates >= 1".into()));
        }
        Ok(())
    }
}

/// A generated dataset together with the structure that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSample {
    pub data: DataSet,
    pub true_omega: Vec<usize>,
    pub true_z: MultiPartition,
    pub true_spec: ModelSpec,
}

fn sample_params(params: &Params, rng: &mut ChaCha8Rng) -> Result<f64> {
    match params {
        Params::Gaussian { mean, var } => {
            let d = Normal::new(*mean, var.sqrt())
                .map_err(|_| Error::InvalidParameter("bad Gaussian parameters".into()))?;
            Ok(d.sample(rng))
        }
        Params::Poisson { rate } => {
            let d = Poisson::new(*rate)
                .map_err(|_| Error::InvalidParameter("bad Poisson rate".into()))?;
            Ok(d.sample(rng))
        }
        Params::Categorical(probs) => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (h, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(h as f64);
                }
            }
            Ok(probs.len() as f64 - 1.0)
        }
    }
}

fn column_from_draws(name: String, params: &Params, draws: Vec<f64>) -> Column {
    match params {
        Params::Gaussian { .. } => Column {
            name,
            kind: VariableKind::Continuous,
            data: ColumnData::Continuous(draws),
        },
        Params::Poisson { .. } => Column {
            name,
            kind: VariableKind::Count,
            data: ColumnData::Count(draws.into_iter().map(|x| x as u32).collect()),
        },
        Params::Categorical(probs) => Column {
            name,
            kind: VariableKind::Categorical(probs.len()),
            data: ColumnData::Categorical {
                levels: (0..probs.len()).map(|h| h.to_string()).collect(),
                codes: draws.into_iter().map(|x| x as usize).collect(),
            },
        },
    }
}

/// Draw `n` rows from a fully specified model: per block a component
/// label from the block weights, then each variable independently from
/// its component margin. Blocks are mutually independent.
pub fn sample_mpm(spec: &ModelSpec, theta: &Theta, n: usize, seed: u64) -> Result<LabeledSample> {
    if theta.weights.len() != spec.n_blocks() || theta.margins.len() != spec.d() {
        return Err(Error::LengthMismatch(theta.weights.len(), spec.n_blocks()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Vec<usize>> = Vec::with_capacity(spec.n_blocks());
    for b in 0..spec.n_blocks() {
        let w = &theta.weights[b];
        let mut zb = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut g = w.len() - 1;
            for (gi, p) in w.iter().enumerate() {
                acc += p;
                if u < acc {
                    g = gi;
                    break;
                }
            }
            zb.push(g);
        }
        labels.push(zb);
    }
    let mut columns = Vec::with_capacity(spec.d());
    for j in 0..spec.d() {
        let b = spec.assignment[j];
        let mut draws = Vec::with_capacity(n);
        for i in 0..n {
            draws.push(sample_params(&theta.margins[j][labels[b][i]], &mut rng)?);
        }
        columns.push(column_from_draws(format!("v{}", j + 1), &theta.margins[j][0], draws));
    }
    Ok(LabeledSample {
        data: DataSet::new(columns)?,
        true_omega: spec.assignment.clone(),
        true_z: MultiPartition { labels },
        true_spec: spec.clone(),
    })
}

/// Smallest k with P(X <= k) >= p for X ~ Poisson(rate), by cumulative
/// summation of the mass function; the tail beyond 1 - 1e-12 is cut off.
pub fn poisson_quantile(p: f64, rate: f64) -> u32 {
    let p = p.min(1.0 - 1e-12).max(0.0);
    let mut pmf = (-rate).exp();
    let mut cdf = pmf;
    let mut k = 0u32;
    while cdf < p {
        k += 1;
        pmf *= rate / k as f64;
        cdf += pmf;
        if pmf < 1e-300 && cdf < p {
            // far tail; stop growing
            break;
        }
    }
    k
}

/// Three blocks of one continuous and one count variable each. Blocks 1
/// and 2 are bi-component with Gaussian margin N(g·δ, 1) and Poisson
/// margin rate g·δ (g ∈ {1, 2}); block 3 is single-component with N(0, 1)
/// and rate δ. Within a component the two variables are coupled by a
/// bivariate Gaussian copula with correlation ρ, so ρ = 0 matches the
/// fitted model exactly and ρ ≠ 0 makes it misspecified.
pub fn sample_scenario(scenario: &SimScenario, seed: u64) -> Result<LabeledSample> {
    scenario.check()?;
    let n = scenario.n;
    let delta = scenario.delta;
    let rho = scenario.rho;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let comp = (1.0 - rho * rho).sqrt();
    let mut labels: Vec<Vec<usize>> = Vec::new();
    let mut columns: Vec<Column> = Vec::new();
    for b in 0..3usize {
        let g_count = if b < 3 - 1 { 2 } else { 1 };
        let zb: Vec<usize> = (0..n).map(|_| rng.gen_range(0..g_count)).collect();
        let mut cont = Vec::with_capacity(n);
        let mut count = Vec::with_capacity(n);
        for &z in &zb {
            let (mean, rate) = if g_count == 2 {
                let g = (z + 1) as f64;
                (g * delta, g * delta)
            } else {
                (0.0, delta)
            };
            let u: f64 = std_normal.sample(&mut rng);
            let e: f64 = std_normal.sample(&mut rng);
            let v = rho * u + comp * e;
            cont.push(mean + u);
            count.push(poisson_quantile(std_normal.cdf(v), rate));
        }
        columns.push(Column {
            name: format!("x{}", b + 1),
            kind: VariableKind::Continuous,
            data: ColumnData::Continuous(cont),
        });
        columns.push(Column {
            name: format!("y{}", b + 1),
            kind: VariableKind::Count,
            data: ColumnData::Count(count),
        });
        labels.push(zb);
    }
    let spec = ModelSpec::new(vec![2, 2, 1], vec![0, 0, 1, 1, 2, 2]);
    Ok(LabeledSample {
        data: DataSet::new(columns)?,
        true_omega: spec.assignment.clone(),
        true_z: MultiPartition { labels },
        true_spec: spec,
    })
}

/// Scores for one fitted model against the generating structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryScores {
    /// ARI between estimated and true variable-to-block assignments.
    pub omega_ari: f64,
    /// Whether (B, sorted component counts) matches the truth exactly.
    pub g_correct: bool,
    /// Mean ARI over true multi-component blocks, each matched to the
    /// estimated block maximizing total agreement (injective pairing).
    pub z_ari: f64,
}

pub fn score_recovery(
    est_spec: &ModelSpec,
    est_z: &MultiPartition,
    truth: &LabeledSample,
) -> Result<RecoveryScores> {
    let omega_ari = block_recovery_ari(&est_spec.assignment, &truth.true_omega)?;
    let mut est_g = est_spec.components.clone();
    let mut true_g = truth.true_spec.components.clone();
    est_g.sort_unstable();
    true_g.sort_unstable();
    let g_correct = est_g == true_g;
    // ARI matrix: true multi-component blocks x estimated blocks.
    let disc: Vec<usize> = (0..truth.true_spec.n_blocks())
        .filter(|&b| truth.true_spec.components[b] > 1)
        .collect();
    let eb = est_spec.n_blocks();
    let mut ari = vec![vec![f64::NEG_INFINITY; eb]; disc.len()];
    for (r, &tb) in disc.iter().enumerate() {
        for (c, row) in ari[r].iter_mut().enumerate().take(eb) {
            *row = adjusted_rand_index(&est_z.labels[c], &truth.true_z.labels[tb])?;
        }
    }
    let z_ari = if disc.is_empty() {
        1.0
    } else {
        best_injective_mean(&ari)
    };
    Ok(RecoveryScores { omega_ari, g_correct, z_ari })
}

/// Maximal mean over injective row-to-column assignments; rows and
/// columns are few (<= B_max), so plain recursion suffices.
fn best_injective_mean(scores: &[Vec<f64>]) -> f64 {
    fn go(scores: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == scores.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for (c, u) in used.clone().iter().enumerate() {
            if *u {
                continue;
            }
            used[c] = true;
            let v = scores[row][c] + go(scores, row + 1, used);
            used[c] = false;
            if v > best {
                best = v;
            }
        }
        if best == f64::NEG_INFINITY {
            // more true blocks than estimated blocks: unmatched rows
            // score zero agreement
            go(scores, row + 1, used)
        } else {
            best
        }
    }
    let mut used = vec![false; scores.first().map_or(0, Vec::len)];
    go(scores, 0, &mut used) / scores.len() as f64
}

/// One aggregated benchmark cell: a scenario crossed with a criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchCell {
    pub difficulty: Difficulty,
    pub n: usize,
    pub rho: f64,
    pub criterion: Criterion,
    pub replicates: usize,
    pub mean_omega_ari: f64,
    pub g_correct_rate: f64,
    pub mean_z_ari: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<SimScenario>,
    pub criteria: Vec<Criterion>,
    pub search: SearchConfig,
}

/// Run every scenario x criterion cell: simulate each replicate with a
/// seed derived from the base seed xor the replicate index, search, and
/// score the top-ranked model.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<Vec<BenchCell>> {
    let mut cells = Vec::new();
    for scenario in &config.scenarios {
        for &criterion in &config.criteria {
            let scores: Vec<Result<RecoveryScores>> = map_collect(
                (0..scenario.replicates).collect(),
                config.search.parallel,
                |rep| {
                    let sample =
                        sample_scenario(scenario, config.search.seed ^ rep as u64)?;
                    let search = SearchConfig {
                        parallel: false,
                        seed: derive_seed(config.search.seed ^ rep as u64, 1),
                        ..config.search.clone()
                    };
                    let ranked = match criterion {
                        Criterion::Bic => search_bic(
                            &sample.data,
                            &search,
                        )?,
                        Criterion::Micl => {
                            let prior = default_priors(&sample.data);
                            search_micl(&sample.data, &prior, &search)?
                        }
                    };
                    let top = &ranked.models[0];
                    score_recovery(&top.spec, &top.partitions, &sample)
                },
            );
            let mut cell = BenchCell {
                difficulty: scenario.difficulty,
                n: scenario.n,
                rho: scenario.rho,
                criterion,
                replicates: 0,
                mean_omega_ari: 0.0,
                g_correct_rate: 0.0,
                mean_z_ari: 0.0,
            };
            for s in scores {
                let s = s?;
                cell.replicates += 1;
                cell.mean_omega_ari += s.omega_ari;
                cell.g_correct_rate += if s.g_correct { 1.0 } else { 0.0 };
                cell.mean_z_ari += s.z_ari;
            }
            let r = cell.replicates as f64;
            cell.mean_omega_ari /= r;
            cell.g_correct_rate /= r;
            cell.mean_z_ari /= r;
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// CSV emission shaped like the benchmark tables: one row per cell.
pub fn write_benchmark_csv<W: std::io::Write>(cells: &[BenchCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "difficulty",
        "n",
        "rho",
        "criterion",
        "replicates",
        "omega_ari",
        "g_correct",
        "z_ari",
    ])?;
    for c in cells {
        w.write_record([
            c.difficulty.to_string(),
            c.n.to_string(),
            format!("{}", c.rho),
            c.criterion.to_string(),
            c.replicates.to_string(),
            format!("{:.4}", c.mean_omega_ari),
            format!("{:.4}", c.g_correct_rate),
            format!("{:.4}", c.mean_z_ari),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn figure1_model() -> (ModelSpec, Theta) {
        let spec = ModelSpec::new(vec![2, 2], vec![0, 0, 1, 1]);
        let margins = (0..4)
            .map(|_| {
                vec![
                    Params::Gaussian { mean: -4.0, var: 1.0 },
                    Params::Gaussian { mean: 4.0, var: 1.0 },
                ]
            })
            .collect();
        let theta = Theta { weights: vec![vec![0.5, 0.5], vec![0.5, 0.5]], margins };
        (spec, theta)
    }

    #[test]
    fn mpm_sample_moments() {
        let (spec, theta) = figure1_model();
        let s = sample_mpm(&spec, &theta, 10_000, 7).unwrap();
        for col in &s.data.columns {
            if let ColumnData::Continuous(xs) = &col.data {
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                // mixture of N(-4,1), N(4,1) at 1/2: mean 0, variance 17
                assert!(mean.abs() < 0.2, "mean {mean}");
                assert!((var - 17.0).abs() < 1.0, "var {var}");
            } else {
                panic!("expected continuous column");
            }
        }
    }

    #[test]
    fn mpm_sampling_is_deterministic() {
        let (spec, theta) = figure1_model();
        let a = sample_mpm(&spec, &theta, 100, 3).unwrap();
        let b = sample_mpm(&spec, &theta, 100, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&a.data).unwrap(),
            serde_json::to_string(&b.data).unwrap()
        );
        assert_eq!(a.true_z.labels, b.true_z.labels);
    }

    #[test]
    fn cross_block_independence() {
        let (spec, theta) = figure1_model();
        let s = sample_mpm(&spec, &theta, 10_000, 11).unwrap();
        let get = |j: usize| match &s.data.columns[j].data {
            ColumnData::Continuous(xs) => xs.clone(),
            _ => unreachable!(),
        };
        let (a, b) = (get(0), get(2)); // different blocks
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
        let sb = (b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n).sqrt();
        let corr = cov / (sa * sb);
        assert!(corr.abs() < 3.0 / n.sqrt() + 0.02, "corr {corr}");
    }

    #[test]
    fn poisson_quantile_values() {
        assert_eq!(poisson_quantile(0.0, 5.0), 0);
        // P(X <= 4 | rate 4.5) ~= 0.5321; quantile at 0.5 is 4
        assert_eq!(poisson_quantile(0.5, 4.5), 4);
        // P(X <= 8 | rate 1) = 1 - 1.11e-6 < 0.999999, so the quantile is 9
        assert_eq!(poisson_quantile(0.999_999, 1.0), 9);
        // monotone in p
        let rate = 3.0;
        let mut last = 0;
        for i in 1..100 {
            let q = poisson_quantile(i as f64 / 100.0, rate);
            assert!(q >= last);
            last = q;
        }
    }

    #[test]
    fn scenario_margins_and_labels() {
        let sc = SimScenario::new(Difficulty::Easy, 20_000, 0.0, 1).unwrap();
        let s = sample_scenario(&sc, 5).unwrap();
        assert_eq!(s.data.d(), 6);
        assert_eq!(s.true_omega, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(s.true_spec.components, vec![2, 2, 1]);
        // component-wise Gaussian means in block 1: delta and 2*delta
        let xs = match &s.data.columns[0].data {
            ColumnData::Continuous(v) => v,
            _ => panic!(),
        };
        let z = &s.true_z.labels[0];
        for g in 0..2 {
            let vals: Vec<f64> =
                xs.iter().zip(z).filter(|(_, &zi)| zi == g).map(|(x, _)| *x).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let target = (g + 1) as f64 * 4.5;
            assert!((mean - target).abs() < 0.05, "g={g} mean {mean}");
        }
        // block 3 continuous margin is standard normal
        let x3 = match &s.data.columns[4].data {
            ColumnData::Continuous(v) => v,
            _ => panic!(),
        };
        let m3 = x3.iter().sum::<f64>() / x3.len() as f64;
        assert!(m3.abs() < 0.05, "{m3}");
    }

    #[test]
    fn copula_correlation_0() {
        let sc = SimScenario::new(Difficulty::Easy, 20_000, 0.0, 1).unwrap();
        check_within_corr(&sc, 0.0, 0.05);
    }

    #[test]
    fn copula_correlation_half() {
        let sc = SimScenario::new(Difficulty::Easy, 20_000, 0.5, 1).unwrap();
        check_within_corr(&sc, 0.5, 0.05);
    }

    fn check_within_corr(sc: &SimScenario, rho: f64, tol: f64) {
        let s = sample_scenario(sc, 9).unwrap();
        let xs = match &s.data.columns[0].data {
            ColumnData::Continuous(v) => v.clone(),
            _ => panic!(),
        };
        let ys = match &s.data.columns[1].data {
            ColumnData::Count(v) => v.clone(),
            _ => panic!(),
        };
        let z = &s.true_z.labels[0];
        // within-component normal scores: residual of x, Gaussianized
        // rank of y within the component
        for g in 0..2 {
            let idx: Vec<usize> = (0..xs.len()).filter(|&i| z[i] == g).collect();
            let u: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
            // rank-based normal scores for the count margin
            let normal = Normal::new(0.0, 1.0).unwrap();
            let mut sorted: Vec<u32> = idx.iter().map(|&i| ys[i]).collect();
            sorted.sort_unstable();
            let m = sorted.len() as f64;
            let v: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let y = ys[i];
                    let below = sorted.partition_point(|&s| s < y) as f64;
                    let upto = sorted.partition_point(|&s| s <= y) as f64;
                    let p = ((below + upto) / 2.0 / m).clamp(1e-6, 1.0 - 1e-6);
                    normal.inverse_cdf(p)
                })
                .collect();
            let nn = u.len() as f64;
            let mu = u.iter().sum::<f64>() / nn;
            let mv = v.iter().sum::<f64>() / nn;
            let cov = u.iter().zip(&v).map(|(a, b)| (a - mu) * (b - mv)).sum::<f64>() / nn;
            let su = (u.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / nn).sqrt();
            let sv = (v.iter().map(|a| (a - mv).powi(2)).sum::<f64>() / nn).sqrt();
            let corr = cov / (su * sv);
            assert!((corr - rho).abs() < tol, "g={g} corr {corr} target {rho}");
        }
    }

    #[test]
    fn score_recovery_perfect() {
        let sc = SimScenario::new(Difficulty::Easy, 50, 0.0, 1).unwrap();
        let s = sample_scenario(&sc, 1).unwrap();
        let scores = score_recovery(&s.true_spec, &s.true_z, &s).unwrap();
        assert_relative_eq!(scores.omega_ari, 1.0);
        assert!(scores.g_correct);
        assert_relative_eq!(scores.z_ari, 1.0);
    }

    #[test]
    fn score_recovery_detects_mismatch() {
        let sc = SimScenario::new(Difficulty::Easy, 50, 0.0, 1).unwrap();
        let s = sample_scenario(&sc, 2).unwrap();
        let wrong = ModelSpec::new(vec![3, 2, 1], s.true_omega.clone());
        let scores = score_recovery(&wrong, &s.true_z, &s).unwrap();
        assert!(!scores.g_correct);
        assert_relative_eq!(scores.omega_ari, 1.0);
    }

    #[test]
    fn injective_matching_prefers_best_pairing() {
        // two true blocks, two estimated ones; crossing is better
        let scores = vec![vec![0.1, 0.9], vec![0.8, 0.2]];
        assert_relative_eq!(best_injective_mean(&scores), (0.9 + 0.8) / 2.0);
    }

    #[test]
    fn benchmark_smoke() {
        let sc = SimScenario::new(Difficulty::Easy, 60, 0.0, 2).unwrap();
        let config = BenchmarkConfig {
            scenarios: vec![sc],
            criteria: vec![Criterion::Bic],
            search: SearchConfig {
                b_max: 2,
                g_max: 2,
                restarts: 3,
                seed: 4,
                ..Default::default()
            },
        };
        let cells = run_benchmark(&config).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].replicates, 2);
        assert!(cells[0].mean_omega_ari >= -1.0 && cells[0].mean_omega_ari <= 1.0);
        let mut buf = Vec::new();
        write_benchmark_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("difficulty,n,rho,criterion"));
        assert_eq!(text.lines().count(), 2);
    }
}
