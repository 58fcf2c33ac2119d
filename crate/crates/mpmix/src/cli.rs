//! Command-line interface: `fit`, `simulate`, `benchmark`, and `ari`
//! subcommands over the library. JSON files are the machine interface;
//! aligned text tables on stdout are the human interface.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bic::{search_bic, Criterion, RankedModels, SearchConfig};
use crate::data::{load_dataset, load_schema, ColumnData, DataSet, Schema};
use crate::dist::default_priors;
use crate::error::{Error, Result};
use crate::metrics::adjusted_rand_index;
use crate::micl::search_micl;
use crate::parallel::configure_threads;
use crate::sim::{
    run_benchmark, sample_scenario, write_benchmark_csv, BenchmarkConfig, Difficulty, SimScenario,
};

/// Effective settings of a `fit` run after merging defaults, the
/// optional config file, and command-line flags (flags win).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub criterion: Criterion,
    pub b_max: usize,
    pub g_max: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Override for the proportion-prior hyperparameter u.
    pub prior_proportion: Option<f64>,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            criterion: Criterion::Bic,
            b_max: 3,
            g_max: 3,
            restarts: 20,
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
            prior_proportion: None,
            data: None,
            schema: None,
            out: None,
        }
    }
}

impl RunConfig {
    fn check(&self) -> Result<()> {
        if self.b_max < 1 || self.g_max < 1 || self.restarts < 1 || self.max_iter < 1 {
            return Err(Error::Config("bounds must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if let Some(u) = self.prior_proportion {
            if !(u > 0.0) {
                return Err(Error::Config("prior proportion must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mpmix",
    version,
    about = "Multi-partitions mixture models: block structure and clustering for mixed-type data"
)]
struct Cli {
    /// Worker thread cap (falls back to MPMIX_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit models to a CSV dataset and rank them by the chosen criterion.
    Fit(FitArgs),
    /// Generate a benchmark scenario dataset with its true structure.
    Simulate(SimulateArgs),
    /// Run a scenario grid and score structure recovery per cell.
    Benchmark(BenchmarkArgs),
    /// Adjusted Rand index between two label files.
    Ari(AriArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON schema mapping column names to kinds (default: inferred).
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, value_enum)]
    criterion: Option<Criterion>,
    #[arg(long)]
    bmax: Option<usize>,
    #[arg(long)]
    gmax: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Proportion-prior hyperparameter u.
    #[arg(long)]
    prior_proportion: Option<f64>,
    /// Path for the ranked-models JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// How many top models to print.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: Difficulty,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for data.csv and truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// JSON file deserializing to the benchmark configuration.
    #[arg(long)]
    config: PathBuf,
    /// CSV output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AriArgs {
    /// First label file: one label per line.
    a: PathBuf,
    /// Second label file: one label per line.
    b: PathBuf,
}

/// Entry point used by the binary; returns the process exit code:
/// 0 success, 1 usage error, 2 data or validation error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("MPMIX_THREADS").ok().and_then(|v| v.parse().ok())
    });
    configure_threads(threads);
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Ari(args) => cmd_ari(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn merge_fit_config(args: &FitArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::Config(format!("bad config file: {e}")))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = args.criterion {
        cfg.criterion = v;
    }
    if let Some(v) = args.bmax {
        cfg.b_max = v;
    }
    if let Some(v) = args.gmax {
        cfg.g_max = v;
    }
    if let Some(v) = args.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = args.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = args.tol {
        cfg.tol = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.prior_proportion {
        cfg.prior_proportion = Some(v);
    }
    if let Some(v) = &args.data {
        cfg.data = Some(v.clone());
    }
    if let Some(v) = &args.schema {
        cfg.schema = Some(v.clone());
    }
    if let Some(v) = &args.out {
        cfg.out = Some(v.clone());
    }
    cfg.check()?;
    Ok(cfg)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let top = args.top;
    let cfg = merge_fit_config(&args)?;
    let data_path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("fit requires --data <file.csv>".into()))?;
    let schema: Schema = match &cfg.schema {
        Some(p) => load_schema(p)?,
        None => Schema::new(),
    };
    let data = load_dataset(data_path, &schema)?;
    let search = SearchConfig {
        b_max: cfg.b_max,
        g_max: cfg.g_max,
        restarts: cfg.restarts,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        seed: cfg.seed,
        parallel: true,
    };
    let ranked = match cfg.criterion {
        Criterion::Bic => search_bic(&data, &search)?,
        Criterion::Micl => {
            let mut prior = default_priors(&data);
            if let Some(u) = cfg.prior_proportion {
                prior.proportion = u;
            }
            search_micl(&data, &prior, &search)?
        }
    };
    print_ranked_table(&data, &ranked, top);
    if let Some(out) = &cfg.out {
        let json = serde_json::to_string_pretty(&ranked)?;
        fs::write(out, json)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// Aligned ranked-models table, one paragraph per model, 1-based block
/// numbering for human consumption.
fn print_ranked_table(data: &DataSet, ranked: &RankedModels, top: usize) {
    println!("criterion: {}", ranked.criterion);
    for (rank, model) in ranked.models.iter().take(top.max(1)).enumerate() {
        println!(
            "#{:<2} value = {:<14.4} B = {}",
            rank + 1,
            model.value,
            model.spec.n_blocks()
        );
        for b in 0..model.spec.n_blocks() {
            let names: Vec<&str> = model
                .spec
                .block_vars(b)
                .iter()
                .map(|&j| data.columns[j].name.as_str())
                .collect();
            println!(
                "    block {} (G = {}): {}",
                b + 1,
                model.spec.components[b],
                names.join(", ")
            );
        }
    }
}

fn write_dataset_csv(data: &DataSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(data.columns.iter().map(|c| c.name.as_str()))?;
    for i in 0..data.n() {
        let row: Vec<String> = data
            .columns
            .iter()
            .map(|c| match &c.data {
                ColumnData::Continuous(xs) => format!("{}", xs[i]),
                ColumnData::Count(xs) => xs[i].to_string(),
                ColumnData::Categorical { levels, codes } => levels[codes[i]].clone(),
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let scenario = SimScenario::new(args.scenario, args.n, args.rho, 1)?;
    let sample = sample_scenario(&scenario, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let data_path = args.out.join("data.csv");
    write_dataset_csv(&sample.data, &data_path)?;
    let truth = serde_json::json!({
        "true_omega": sample.true_omega,
        "components": sample.true_spec.components,
        "true_z": sample.true_z.labels,
        "scenario": scenario,
        "seed": args.seed,
    });
    let truth_path = args.out.join("truth.json");
    fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
    println!("wrote {} and {}", data_path.display(), truth_path.display());
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let config: BenchmarkConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("bad benchmark config: {e}")))?;
    let cells = run_benchmark(&config)?;
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path)?;
            write_benchmark_csv(&cells, file)?;
            println!("wrote {}", path.display());
        }
        None => {
            let mut buf = Vec::new();
            write_benchmark_csv(&cells, &mut buf)?;
            std::io::stdout().write_all(&buf)?;
        }
    }
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let tokens: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if tokens.is_empty() {
        return Err(Error::Schema(format!("{}: no labels found", path.display())));
    }
    let mut seen: Vec<&str> = Vec::new();
    Ok(tokens
        .iter()
        .map(|t| match seen.iter().position(|s| s == t) {
            Some(i) => i,
            None => {
                seen.push(t);
                seen.len() - 1
            }
        })
        .collect())
}

fn cmd_ari(args: AriArgs) -> Result<()> {
    let a = read_labels(&args.a)?;
    let b = read_labels(&args.b)?;
    let value = adjusted_rand_index(&a, &b)?;
    println!("{value}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_are_valid() {
        RunConfig::default().check().unwrap();
    }

    #[test]
    fn config_rejects_bad_bounds() {
        let cfg = RunConfig { b_max: 0, ..Default::default() };
        assert!(cfg.check().is_err());
        let cfg = RunConfig { tol: 0.0, ..Default::default() };
        assert!(cfg.check().is_err());
    }

    #[test]
    fn config_file_merges_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"criterion":"micl","b_max":2,"seed":9}"#).unwrap();
        let args = FitArgs {
            config: Some(path),
            data: None,
            schema: None,
            criterion: None,
            bmax: Some(4),
            gmax: None,
            restarts: None,
            max_iter: None,
            tol: None,
            seed: None,
            prior_proportion: None,
            out: None,
            top: 5,
        };
        let cfg = merge_fit_config(&args).unwrap();
        assert_eq!(cfg.criterion, Criterion::Micl); // from file
        assert_eq!(cfg.b_max, 4); // flag wins
        assert_eq!(cfg.seed, 9); // from file
        assert_eq!(cfg.g_max, 3); // default
    }

    #[test]
    fn label_reader_compacts_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        fs::write(&path, "a\nb\na\nc\n").unwrap();
        assert_eq!(read_labels(&path).unwrap(), vec![0, 1, 0, 2]);
    }
}
