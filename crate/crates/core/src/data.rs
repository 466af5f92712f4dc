//! Trial datasets: covariates, treatments, outcomes and propensities.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TREATMENT_COLUMN: &str = "treatment";
pub const OUTCOME_COLUMN: &str = "outcome";
pub const PROPENSITY_COLUMN: &str = "propensity";
pub const FEATURE_PREFIX: &str = "x_";

/// Dense covariate matrix stored column-major, so that a feature scan
/// during split finding reads contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    values: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Covariates {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_cols = columns.len();
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::InvalidData("covariate columns differ in length".into()));
        }
        let values = columns.into_iter().flatten().collect();
        Ok(Self {
            values,
            n_rows,
            n_cols,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(Error::BadRow {
                row: bad + 1,
                message: format!("expected {n_cols} covariates, got {}", rows[bad].len()),
            });
        }
        let mut values = vec![0.0; n_rows * n_cols];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                values[j * n_rows + i] = v;
            }
        }
        Ok(Self {
            values,
            n_rows,
            n_cols,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_rows..(j + 1) * self.n_rows]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n_rows + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n_cols).map(|j| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.n_rows).map(|i| self.row(i))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for j in 0..self.n_cols {
            let col = self.column(j);
            values.extend(indices.iter().map(|&i| col[i]));
        }
        Self {
            values,
            n_rows: indices.len(),
            n_cols: self.n_cols,
        }
    }
}

/// How the probability of the received treatment is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySpec {
    Constant(f64),
    Column(String),
}

impl Default for PropensitySpec {
    fn default() -> Self {
        PropensitySpec::Constant(0.5)
    }
}

impl PropensitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PropensitySpec::Constant(v) if !(*v > 0.0 && *v < 1.0) => Err(Error::InvalidArgument(
                format!("constant propensity {v} outside (0,1)"),
            )),
            _ => Ok(()),
        }
    }
}

/// A randomized-trial dataset `(X, A, Y, π_A(X))`.
///
/// Immutable once constructed; every constructor enforces the invariants
/// (equal lengths, `n, p >= 1`, treatments in `{-1, +1}`, propensities in
/// `(0, 1)`, all values finite).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Covariates,
    treatments: Vec<i8>,
    outcomes: Vec<f64>,
    propensities: Vec<f64>,
}

impl Dataset {
    pub fn new(
        covariates: Covariates,
        treatments: Vec<i8>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
    ) -> Result<Self> {
        let n = covariates.n_rows();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if covariates.n_cols() == 0 {
            return Err(Error::InvalidData("dataset has no covariates".into()));
        }
        for (name, len) in [
            ("treatments", treatments.len()),
            ("outcomes", outcomes.len()),
            ("propensities", propensities.len()),
        ] {
            if len != n {
                return Err(Error::InvalidData(format!(
                    "{name} has length {len}, covariates have {n} rows"
                )));
            }
        }
        for i in 0..n {
            let row = i + 1;
            if treatments[i] != 1 && treatments[i] != -1 {
                return Err(Error::BadRow {
                    row,
                    message: format!("treatment {} not in {{-1, +1}}", treatments[i]),
                });
            }
            if !outcomes[i].is_finite() {
                return Err(Error::BadRow {
                    row,
                    message: "non-finite outcome".into(),
                });
            }
            if !(propensities[i] > 0.0 && propensities[i] < 1.0) {
                return Err(Error::BadRow {
                    row,
                    message: format!("propensity {} outside (0,1)", propensities[i]),
                });
            }
        }
        if let Some(pos) = covariates.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadRow {
                row: pos % n + 1,
                message: "non-finite covariate".into(),
            });
        }
        Ok(Self {
            covariates,
            treatments,
            outcomes,
            propensities,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.treatments.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.covariates.n_cols()
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn treatments(&self) -> &[i8] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    /// Indices of the rows that received treatment `arm`.
    pub fn arm_indices(&self, arm: i8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatments[i] == arm).collect()
    }

    /// Row subset, preserving column order and the order of `indices`.
    pub fn split(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty index set".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidArgument(format!(
                "row index {bad} out of range for {} rows",
                self.n()
            )));
        }
        Ok(Dataset {
            covariates: self.covariates.select_rows(indices),
            treatments: indices.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            propensities: indices.iter().map(|&i| self.propensities[i]).collect(),
        })
    }

    /// Same rows with the outcome vector replaced.
    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            self.covariates.clone(),
            self.treatments.clone(),
            outcomes,
            self.propensities.clone(),
        )
    }
}

/// Split of `0..n` into `k` balanced folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deterministic balanced k-fold assignment: a seeded shuffle of `0..n`
/// dealt round-robin into the folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= k <= n for k-fold splitting, got k={k}, n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (slot, &i) in order.iter().enumerate() {
        fold_of[i] = slot % k;
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

fn parse_real(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::BadRow {
        row,
        message: format!("cannot parse `{field}` in column `{column}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::BadRow {
            row,
            message: format!("non-finite value `{field}` in column `{column}`"),
        });
    }
    Ok(v)
}

struct Header {
    features: Vec<usize>,
    by_name: HashMap<String, usize>,
}

impl Header {
    fn read<R: std::io::Read>(reader: &mut csv::Reader<R>) -> Result<Self> {
        let headers = reader.headers()?.clone();
        let mut by_name = HashMap::new();
        let mut features = Vec::new();
        for (idx, name) in headers.iter().enumerate() {
            let name = name.trim();
            if name.starts_with(FEATURE_PREFIX) {
                features.push(idx);
            }
            by_name.insert(name.to_string(), idx);
        }
        if features.is_empty() {
            return Err(Error::MissingColumn(format!("{FEATURE_PREFIX}*")));
        }
        Ok(Self { features, by_name })
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a trial CSV with header `x_1,...,x_p,treatment,outcome[,propensity]`.
///
/// Feature columns are every column whose name starts with `x_`, in file
/// order. Unknown columns are ignored. Row numbers in errors count data
/// rows from 1.
pub fn load_csv(path: impl AsRef<Path>, propensity: &PropensitySpec) -> Result<Dataset> {
    propensity.validate()?;
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let header = Header::read(&mut reader)?;
    let t_col = header.require(TREATMENT_COLUMN)?;
    let y_col = header.require(OUTCOME_COLUMN)?;
    let p_col = match propensity {
        PropensitySpec::Column(name) => Some(header.require(name)?),
        PropensitySpec::Constant(_) => None,
    };

    let mut columns = vec![Vec::new(); header.features.len()];
    let mut treatments = Vec::new();
    let mut outcomes = Vec::new();
    let mut propensities = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::BadRow {
            row,
            message: e.to_string(),
        })?;
        let field = |idx: usize| {
            record.get(idx).ok_or_else(|| Error::BadRow {
                row,
                message: format!("missing field {}", idx + 1),
            })
        };
        for (c, &idx) in header.features.iter().enumerate() {
            columns[c].push(parse_real(field(idx)?, row, "covariate")?);
        }
        let a = parse_real(field(t_col)?, row, TREATMENT_COLUMN)?;
        let a = if a == 1.0 {
            1
        } else if a == -1.0 {
            -1
        } else {
            return Err(Error::BadRow {
                row,
                message: format!("treatment {a} not in {{-1, +1}}"),
            });
        };
        treatments.push(a);
        outcomes.push(parse_real(field(y_col)?, row, OUTCOME_COLUMN)?);
        let pi = match (p_col, propensity) {
            (Some(idx), _) => parse_real(field(idx)?, row, PROPENSITY_COLUMN)?,
            (None, PropensitySpec::Constant(v)) => *v,
            (None, PropensitySpec::Column(_)) => unreachable!(),
        };
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::BadRow {
                row,
                message: format!("propensity {pi} outside (0,1)"),
            });
        }
        propensities.push(pi);
    }
    if treatments.is_empty() {
        return Err(Error::InvalidData(format!("{} has no data rows", path.display())));
    }
    Dataset::new(
        Covariates::from_columns(columns)?,
        treatments,
        outcomes,
        propensities,
    )
}

/// Reads only the `x_*` columns of a CSV (no treatment or outcome needed).
pub fn load_covariates_csv(path: impl AsRef<Path>) -> Result<Covariates> {
    let mut reader = open_reader(path.as_ref())?;
    let header = Header::read(&mut reader)?;
    let mut columns = vec![Vec::new(); header.features.len()];
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::BadRow {
            row,
            message: e.to_string(),
        })?;
        for (c, &idx) in header.features.iter().enumerate() {
            let field = record.get(idx).ok_or_else(|| Error::BadRow {
                row,
                message: format!("missing field {}", idx + 1),
            })?;
            columns[c].push(parse_real(field, row, "covariate")?);
        }
    }
    Covariates::from_columns(columns)
}

/// Reads one named numeric column.
pub fn read_csv_column(path: impl AsRef<Path>, name: &str) -> Result<Vec<f64>> {
    let mut reader = open_reader(path.as_ref())?;
    let header = Header::read(&mut reader)?;
    let idx = header.require(name)?;
    let mut out = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::BadRow {
            row,
            message: e.to_string(),
        })?;
        let field = record.get(idx).ok_or_else(|| Error::BadRow {
            row,
            message: format!("missing field `{name}`"),
        })?;
        out.push(parse_real(field, row, name)?);
    }
    Ok(out)
}

/// An additional numeric column appended after the standard ones.
pub struct ExtraColumn<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// Writes `data` as CSV. Reals use the shortest round-trip decimal form,
/// so `load_csv` reproduces every value exactly.
pub fn write_csv(
    path: impl AsRef<Path>,
    data: &Dataset,
    include_propensity: bool,
    extra: &[ExtraColumn<'_>],
) -> Result<()> {
    let path = path.as_ref();
    for col in extra {
        if col.values.len() != data.n() {
            return Err(Error::DimensionMismatch {
                expected: data.n(),
                got: col.values.len(),
            });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("{FEATURE_PREFIX}{j}")).collect();
    header.push(TREATMENT_COLUMN.into());
    header.push(OUTCOME_COLUMN.into());
    if include_propensity {
        header.push(PROPENSITY_COLUMN.into());
    }
    header.extend(extra.iter().map(|c| c.name.to_string()));
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let x = data.covariates();
    let mut line = String::new();
    for i in 0..data.n() {
        line.clear();
        for j in 0..data.p() {
            line.push_str(&format!("{},", x.get(i, j)));
        }
        line.push_str(&format!("{},{}", data.treatments[i], data.outcomes[i]));
        if include_propensity {
            line.push_str(&format!(",{}", data.propensities[i]));
        }
        for col in extra {
            line.push_str(&format!(",{}", col.values[i]));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}
