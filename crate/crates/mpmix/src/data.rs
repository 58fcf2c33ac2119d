//! Typed mixed-type datasets and model specifications.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared nature of a variable. Binary columns are stored as
/// two-level categorical data internally (a single Bernoulli free
/// parameter), which unifies the conjugate machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableKind {
    Continuous,
    Count,
    Binary,
    /// Categorical with `m >= 2` levels.
    Categorical(usize),
}

impl VariableKind {
    /// Free parameters of one component's univariate margin.
    pub fn free_params(&self) -> usize {
        match self {
            VariableKind::Continuous => 2,
            VariableKind::Count => 1,
            VariableKind::Binary => 1,
            VariableKind::Categorical(m) => m - 1,
        }
    }
}

impl std::fmt::Display for VariableKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VariableKind::Continuous => write!(f, "Continuous"),
            VariableKind::Count => write!(f, "Count"),
            VariableKind::Binary => write!(f, "Binary"),
            VariableKind::Categorical(m) => write!(f, "Categorical({m})"),
        }
    }
}

/// Column storage. Categorical codes are indexes into `levels`,
/// assigned in first-appearance order so encodings are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Continuous(Vec<f64>),
    Count(Vec<u32>),
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Count(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: VariableKind,
    pub data: ColumnData,
}

impl Column {
    /// Number of levels for categorical/binary columns.
    pub fn levels(&self) -> Option<usize> {
        match &self.data {
            ColumnData::Categorical { levels, .. } => Some(levels.len()),
            _ => None,
        }
    }
}

/// An `n x d` mixed-type data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub columns: Vec<Column>,
}

impl DataSet {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("dataset must have at least one column".into()));
        }
        let n = columns[0].data.len();
        if n == 0 {
            return Err(Error::Schema("dataset must have at least one row".into()));
        }
        for c in &columns {
            if c.data.len() != n {
                return Err(Error::LengthMismatch(c.data.len(), n));
            }
        }
        Ok(DataSet { columns })
    }

    pub fn n(&self) -> usize {
        self.columns[0].data.len()
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

/// Per-column kind declaration used when loading a CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Auto,
    Continuous,
    Count,
    Binary,
    Categorical,
}

/// Schema sidecar: column name -> declared kind.
pub type Schema = BTreeMap<String, SchemaKind>;

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Load a CSV file (header row, UTF-8) against a schema. Columns not
/// named in the schema default to `auto`.
pub fn load_dataset(csv_path: &Path, schema: &Schema) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(csv_path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let d = headers.len();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); d];
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != d {
            return Err(Error::Ragged { row: idx + 1, found: rec.len(), expected: d });
        }
        for (j, field) in rec.iter().enumerate() {
            cells[j].push(field.trim().to_string());
        }
    }
    if cells[0].is_empty() {
        return Err(Error::Schema("csv contains no data rows".into()));
    }
    let mut columns = Vec::with_capacity(d);
    for (j, name) in headers.iter().enumerate() {
        let declared = schema.get(name).copied().unwrap_or(SchemaKind::Auto);
        columns.push(build_column(name, declared, &cells[j])?);
    }
    DataSet::new(columns)
}

fn build_column(name: &str, declared: SchemaKind, raw: &[String]) -> Result<Column> {
    for (i, v) in raw.iter().enumerate() {
        if v.is_empty() {
            return Err(Error::Missing { row: i + 1, column: name.into() });
        }
    }
    let resolved = match declared {
        SchemaKind::Auto => infer_kind(raw),
        other => other,
    };
    match resolved {
        SchemaKind::Continuous => {
            let mut vals = Vec::with_capacity(raw.len());
            for (i, v) in raw.iter().enumerate() {
                let x: f64 = v.parse().map_err(|_| bad(i, name, v, "Continuous"))?;
                if !x.is_finite() {
                    return Err(bad(i, name, v, "Continuous"));
                }
                vals.push(x);
            }
            Ok(Column {
                name: name.into(),
                kind: VariableKind::Continuous,
                data: ColumnData::Continuous(vals),
            })
        }
        SchemaKind::Count => {
            let mut vals = Vec::with_capacity(raw.len());
            for (i, v) in raw.iter().enumerate() {
                let x: u32 = v.parse().map_err(|_| bad(i, name, v, "Count"))?;
                vals.push(x);
            }
            Ok(Column {
                name: name.into(),
                kind: VariableKind::Count,
                data: ColumnData::Count(vals),
            })
        }
        SchemaKind::Binary => {
            let levels = vec!["0".to_string(), "1".to_string()];
            let mut codes = Vec::with_capacity(raw.len());
            for (i, v) in raw.iter().enumerate() {
                match v.as_str() {
                    "0" => codes.push(0),
                    "1" => codes.push(1),
                    _ => return Err(bad(i, name, v, "Binary")),
                }
            }
            Ok(Column {
                name: name.into(),
                kind: VariableKind::Binary,
                data: ColumnData::Categorical { levels, codes },
            })
        }
        SchemaKind::Categorical => {
            let mut levels: Vec<String> = Vec::new();
            let mut codes = Vec::with_capacity(raw.len());
            for v in raw {
                let code = match levels.iter().position(|l| l == v) {
                    Some(p) => p,
                    None => {
                        levels.push(v.clone());
                        levels.len() - 1
                    }
                };
                codes.push(code);
            }
            if levels.len() < 2 {
                return Err(Error::Schema(format!(
                    "categorical column '{name}' has {} distinct level(s); need at least 2",
                    levels.len()
                )));
            }
            let m = levels.len();
            Ok(Column {
                name: name.into(),
                kind: VariableKind::Categorical(m),
                data: ColumnData::Categorical { levels, codes },
            })
        }
        SchemaKind::Auto => unreachable!(),
    }
}

fn bad(i: usize, name: &str, v: &str, kind: &str) -> Error {
    Error::BadValue { row: i + 1, column: name.into(), value: v.into(), kind: kind.into() }
}

/// `auto` resolution: categorical when the tokens are non-numeric with
/// few distinct values, count for non-negative integer columns with many
/// distinct values, continuous otherwise.
fn infer_kind(raw: &[String]) -> SchemaKind {
    let all_numeric = raw.iter().all(|v| v.parse::<f64>().is_ok());
    let mut distinct: Vec<&str> = raw.iter().map(|s| s.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if !all_numeric {
        return SchemaKind::Categorical;
    }
    let all_counts = raw
        .iter()
        .all(|v| !v.contains('.') && v.parse::<u32>().is_ok());
    if all_counts && distinct.len() > 10 {
        return SchemaKind::Count;
    }
    SchemaKind::Continuous
}

/// A model `m = (B, G_1..G_B, omega)`. Blocks and components are
/// 0-indexed throughout the crate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Components per block, length B.
    pub components: Vec<usize>,
    /// Variable-to-block map, length d, entries in `0..B`.
    pub assignment: Vec<usize>,
}

impl ModelSpec {
    pub fn new(components: Vec<usize>, assignment: Vec<usize>) -> Self {
        ModelSpec { components, assignment }
    }

    pub fn n_blocks(&self) -> usize {
        self.components.len()
    }

    pub fn d(&self) -> usize {
        self.assignment.len()
    }

    /// Variable indexes belonging to block `b`.
    pub fn block_vars(&self, b: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == b)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Structural validation plus identifiability diagnostics.
///
/// A block with more than one component whose variables are all
/// categorical or binary triggers a warning: identifiability of
/// multinomial mixtures is not guaranteed there.
pub fn validate_model(spec: &ModelSpec, data: &DataSet) -> Result<Vec<String>> {
    if spec.assignment.len() != data.d() {
        return Err(Error::InvalidModel(format!(
            "assignment length {} does not match d={}",
            spec.assignment.len(),
            data.d()
        )));
    }
    let b = spec.n_blocks();
    if b == 0 {
        return Err(Error::InvalidModel("model must have at least one block".into()));
    }
    for (bi, &g) in spec.components.iter().enumerate() {
        if g < 1 {
            return Err(Error::InvalidModel(format!("block {bi} has {g} components")));
        }
    }
    for (j, &w) in spec.assignment.iter().enumerate() {
        if w >= b {
            return Err(Error::InvalidModel(format!(
                "variable {j} assigned to block {w}, out of range 0..{b}"
            )));
        }
    }
    let mut warnings = Vec::new();
    for bi in 0..b {
        let vars = spec.block_vars(bi);
        if vars.is_empty() {
            return Err(Error::InvalidModel(format!("block {bi} is empty")));
        }
        if spec.components[bi] > 1
            && vars.iter().all(|&j| {
                matches!(
                    data.columns[j].kind,
                    VariableKind::Binary | VariableKind::Categorical(_)
                )
            })
        {
            warnings.push(format!(
                "block {bi} mixes {} components over categorical/binary variables only; \
                 multinomial mixture identifiability conditions apply",
                spec.components[bi]
            ));
        }
    }
    Ok(warnings)
}

/// Old block indexes in canonical order: sorted by smallest member
/// variable, empty blocks last.
pub fn canonical_block_order(spec: &ModelSpec) -> Vec<usize> {
    let b = spec.n_blocks();
    let mut first_var = vec![usize::MAX; b];
    for (j, &w) in spec.assignment.iter().enumerate() {
        if first_var[w] == usize::MAX {
            first_var[w] = j;
        }
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by_key(|&bi| (first_var[bi], bi));
    order
}

/// Relabel blocks so indexes appear in order of their smallest member
/// variable; `components` is reordered consistently. Idempotent.
pub fn canonicalize_model(spec: &ModelSpec) -> ModelSpec {
    let order = canonical_block_order(spec);
    let mut relabel = vec![0usize; spec.n_blocks()];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    ModelSpec {
        components: order.iter().map(|&old| spec.components[old]).collect(),
        assignment: spec.assignment.iter().map(|&w| relabel[w]).collect(),
    }
}

/// One hard partition of the rows per block; labels are `0..G_b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiPartition {
    pub labels: Vec<Vec<usize>>,
}

impl MultiPartition {
    pub fn n_blocks(&self) -> usize {
        self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn gaussian_ds(d: usize, n: usize) -> DataSet {
        let columns = (0..d)
            .map(|j| Column {
                name: format!("v{j}"),
                kind: VariableKind::Continuous,
                data: ColumnData::Continuous(vec![0.0; n]),
            })
            .collect();
        DataSet::new(columns).unwrap()
    }

    #[test]
    fn load_small_csv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "age,children\n31.5,2\n24.0,0\n40.1,3").unwrap();
        let mut schema = Schema::new();
        schema.insert("age".into(), SchemaKind::Continuous);
        schema.insert("children".into(), SchemaKind::Count);
        let ds = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.columns[0].kind, VariableKind::Continuous);
        assert_eq!(ds.columns[1].kind, VariableKind::Count);
    }

    #[test]
    fn count_column_rejects_decimal() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "c\n1\n2.5\n3").unwrap();
        let mut schema = Schema::new();
        schema.insert("c".into(), SchemaKind::Count);
        let err = load_dataset(f.path(), &schema).unwrap_err();
        match err {
            Error::BadValue { row, column, value, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "c");
                assert_eq!(value, "2.5");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn dataset_json_roundtrip_all_kinds() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,k,b,c\n1.25,4,0,red\n-3.5,0,1,blue\n0.75,7,1,red").unwrap();
        let mut schema = Schema::new();
        schema.insert("x".into(), SchemaKind::Continuous);
        schema.insert("k".into(), SchemaKind::Count);
        schema.insert("b".into(), SchemaKind::Binary);
        schema.insert("c".into(), SchemaKind::Categorical);
        let ds = load_dataset(f.path(), &schema).unwrap();
        let json = serde_json::to_string(&ds).unwrap();
        let back: DataSet = serde_json::from_str(&json).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn categorical_levels_first_appearance() {
        let col = build_column(
            "c",
            SchemaKind::Categorical,
            &["b".into(), "a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        match col.data {
            ColumnData::Categorical { levels, codes } => {
                assert_eq!(levels, vec!["b", "a", "c"]);
                assert_eq!(codes, vec![0, 1, 0, 2]);
            }
            _ => panic!("expected categorical"),
        }
    }

    #[test]
    fn auto_inference() {
        let cat: Vec<String> = ["x", "y", "x"].iter().map(|s| s.to_string()).collect();
        assert_eq!(infer_kind(&cat), SchemaKind::Categorical);
        let counts: Vec<String> = (0..15).map(|i| i.to_string()).collect();
        assert_eq!(infer_kind(&counts), SchemaKind::Count);
        let few_ints: Vec<String> = ["1", "2", "3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(infer_kind(&few_ints), SchemaKind::Continuous);
        let reals: Vec<String> = ["1.5", "2.25"].iter().map(|s| s.to_string()).collect();
        assert_eq!(infer_kind(&reals), SchemaKind::Continuous);
    }

    #[test]
    fn validate_well_formed() {
        let ds = gaussian_ds(4, 5);
        let spec = ModelSpec::new(vec![2, 2], vec![0, 0, 1, 1]);
        let warnings = validate_model(&spec, &ds).unwrap();
        assert!(warnings.is_empty());
    }

    #[test]
    fn validate_out_of_range_block() {
        let ds = gaussian_ds(4, 5);
        let spec = ModelSpec::new(vec![2, 2], vec![0, 0, 2, 2]);
        assert!(validate_model(&spec, &ds).is_err());
    }

    #[test]
    fn validate_flags_all_categorical_block() {
        let columns = vec![
            Column {
                name: "a".into(),
                kind: VariableKind::Categorical(2),
                data: ColumnData::Categorical {
                    levels: vec!["x".into(), "y".into()],
                    codes: vec![0, 1, 0],
                },
            },
            Column {
                name: "b".into(),
                kind: VariableKind::Binary,
                data: ColumnData::Categorical {
                    levels: vec!["0".into(), "1".into()],
                    codes: vec![0, 1, 1],
                },
            },
        ];
        let ds = DataSet::new(columns).unwrap();
        let spec = ModelSpec::new(vec![2], vec![0, 0]);
        let warnings = validate_model(&spec, &ds).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn canonicalize_relabels() {
        let spec = ModelSpec::new(vec![3, 2], vec![1, 1, 0, 0]);
        let canon = canonicalize_model(&spec);
        assert_eq!(canon.assignment, vec![0, 0, 1, 1]);
        assert_eq!(canon.components, vec![2, 3]);
    }

    #[test]
    fn canonicalize_three_blocks() {
        // omega=(3,1,2), G=(4,5,6) in 1-based terms -> omega=(1,2,3), G=(6,4,5)
        let spec = ModelSpec::new(vec![4, 5, 6], vec![2, 0, 1]);
        let canon = canonicalize_model(&spec);
        assert_eq!(canon.assignment, vec![0, 1, 2]);
        assert_eq!(canon.components, vec![6, 4, 5]);
    }

    #[test]
    fn canonicalize_idempotent() {
        let spec = ModelSpec::new(vec![4, 5, 6], vec![2, 0, 1]);
        let once = canonicalize_model(&spec);
        let twice = canonicalize_model(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn canonical_specs_validate() {
        let ds = gaussian_ds(3, 4);
        let spec = ModelSpec::new(vec![4, 5, 6], vec![2, 0, 1]);
        let canon = canonicalize_model(&spec);
        assert!(validate_model(&canon, &ds).is_ok());
    }
}
