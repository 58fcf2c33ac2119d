//! Multi-partitions mixture models for mixed-type tabular data.
//!
//! Variables are grouped into independent blocks; each block carries its
//! own latent class model. Fitting learns the variable-to-block map and
//! the per-block clusterings jointly, with model selection by a
//! penalized-likelihood criterion (BIC) or by direct maximization of the
//! integrated complete-data likelihood (MICL).

pub mod bic;
pub mod cli;
pub mod data;
pub mod dist;
pub mod em;
pub mod error;
pub mod metrics;
pub mod micl;
pub mod parallel;
pub mod seed;
pub mod sim;

pub use bic::{search_bic, Criterion, RankedModel, RankedModels, SearchConfig};
pub use data::{
    load_dataset, load_schema, Column, ColumnData, DataSet, ModelSpec, MultiPartition, Schema,
    SchemaKind, VariableKind,
};
pub use dist::{default_priors, PriorHyper, VariablePrior};
pub use em::{fit_em, EmConfig, FitResult, Theta};
pub use error::{Error, Result};
pub use metrics::{adjusted_rand_index, block_recovery_ari, cross_tabulate, ContingencyTable};
pub use micl::{optimize_micl, search_micl, MiclConfig, MiclResult};
pub use sim::{
    run_benchmark, sample_mpm, sample_scenario, BenchmarkConfig, Difficulty, LabeledSample,
    SimScenario,
};
