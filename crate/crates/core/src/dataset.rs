//! Problem manifests, observed data tables, noise injection and column
//! statistics.
//!
//! A data file is a JSON array of rows, each row `[y, x_1, ..., x_d]` with
//! the target first. A problem manifest names the variables and points at
//! the train / in-domain test / out-of-domain test files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Absolute threshold below which a value counts as zero for relative-error
/// metrics and zero fractions.
pub const ZERO_ATOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("malformed data: {0}")]
    Syntax(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("ragged rows: row {row} has {found} values, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("row {row}, column {column}: non-finite value")]
    NonFinite { row: usize, column: usize },
    #[error("table has no rows")]
    Empty,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Observed data, row-major, target first.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    width: usize,
    data: Vec<f64>,
}

impl DataTable {
    /// Build from rows, validating width and finiteness.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<DataTable, DatasetError> {
        let Some(first) = rows.first() else {
            return Err(DatasetError::Empty);
        };
        let width = first.len();
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(DatasetError::Ragged {
                row: i,
                found: row.len(),
                expected: width,
            });
        }
        if width < 2 {
            return Err(DatasetError::Row {
                row: 0,
                msg: "a row needs a target and at least one input".into(),
            });
        }
        let mut data = Vec::with_capacity(width * rows.len());
        for (i, row) in rows.iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row: i, column: j });
            }
            data.extend_from_slice(row);
        }
        Ok(DataTable { width, data })
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.width
    }

    /// Input dimension d.
    pub fn dim(&self) -> usize {
        self.width - 1
    }

    /// Row i as `[y, x_1..x_d]`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.width)
    }

    pub fn target(&self, i: usize) -> f64 {
        self.data[i * self.width]
    }

    pub fn targets(&self) -> Vec<f64> {
        self.column(0)
    }

    /// Column j of the full row (0 is the target, j >= 1 the inputs).
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Sub-table with the given row indices, in that order.
    pub fn select(&self, indices: &[usize]) -> DataTable {
        let mut data = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DataTable {
            width: self.width,
            data,
        }
    }

    /// Copy with the target column replaced.
    pub fn with_targets(&self, targets: &[f64]) -> DataTable {
        let mut data = self.data.clone();
        for (row, y) in data.chunks_exact_mut(self.width).zip(targets) {
            row[0] = *y;
        }
        DataTable {
            width: self.width,
            data,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// JSON array-of-arrays rendering (shortest round-trip floats).
    pub fn to_json(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        out.push('[');
        for (i, row) in self.rows().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push('[');
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(v).unwrap_or_else(|_| "null".into()));
            }
            out.push(']');
        }
        out.push(']');
        out
    }
}

/// Parse a serialized table: a top-level JSON array of numeric arrays.
pub fn parse_table(bytes: &[u8]) -> Result<DataTable, DatasetError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| DatasetError::Syntax(e.to_string()))?;
    let serde_json::Value::Array(rows) = value else {
        return Err(DatasetError::Syntax("expected a top-level array".into()));
    };
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let serde_json::Value::Array(cells) = row else {
            return Err(DatasetError::Row {
                row: i,
                msg: "expected an array of numbers".into(),
            });
        };
        let mut vals = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            match cell.as_f64() {
                Some(v) => vals.push(v),
                None => {
                    return Err(DatasetError::Row {
                        row: i,
                        msg: format!("column {j} is not a number"),
                    })
                }
            }
        }
        out.push(vals);
    }
    DataTable::from_rows(out)
}

pub fn load_table(path: &Path) -> Result<DataTable, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_table(&bytes)
}

/// Multiply every target by `1 + eps`, `eps ~ N(0, sigma^2)`, drawn from a
/// generator seeded with `seed`. Inputs are untouched.
pub fn inject_noise(table: &DataTable, sigma: f64, seed: u64) -> DataTable {
    if sigma == 0.0 {
        return table.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<f64> = table
        .rows()
        .map(|r| r[0] * (1.0 + normal.sample(&mut rng)))
        .collect();
    table.with_targets(&noisy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub fraction_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    /// One entry per column, target first.
    pub columns: Vec<ColumnStats>,
    /// Pearson correlation over all d+1 columns. Any pair involving a
    /// constant column is 0, including its diagonal entry.
    pub correlation: Vec<Vec<f64>>,
}

pub fn column_stats(table: &DataTable) -> StatsSummary {
    let width = table.dim() + 1;
    let cols: Vec<Vec<f64>> = (0..width).map(|j| table.column(j)).collect();
    let columns = cols.iter().map(|c| describe(c)).collect::<Vec<_>>();
    let mut correlation = vec![vec![0.0; width]; width];
    for a in 0..width {
        for b in a..width {
            let r = pearson(&cols[a], &cols[b]);
            correlation[a][b] = r;
            correlation[b][a] = r;
        }
    }
    StatsSummary {
        columns,
        correlation,
    }
}

pub(crate) fn describe(col: &[f64]) -> ColumnStats {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ColumnStats {
        mean,
        std: var.sqrt(),
        min: col.iter().copied().fold(f64::INFINITY, f64::min),
        max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        fraction_zero: col.iter().filter(|v| v.abs() <= ZERO_ATOL).count() as f64 / n,
    }
}

/// Pearson correlation; 0 when either column is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let ma = a[..n].iter().sum::<f64>() / nf;
    let mb = b[..n].iter().sum::<f64>() / nf;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    // sqrt(saa*sbb) rather than sqrt(saa)*sqrt(sbb): identical columns give
    // exactly 1.
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Physics,
    Chemistry,
    Biology,
    MaterialScience,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_ood: Option<String>,
}

/// Problem manifest as stored on disk. File paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub domain: Domain,
    pub target_name: String,
    pub target_description: String,
    pub variables: Vec<Variable>,
    pub files: SplitFiles,
    /// Ground-truth skeleton in the DSL, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

impl Problem {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.variables.is_empty() {
            return Err(DatasetError::Manifest("at least one variable is required".into()));
        }
        for (i, v) in self.variables.iter().enumerate() {
            if v.name.trim().is_empty() {
                return Err(DatasetError::Manifest(format!("variable {i} has an empty name")));
            }
            if v.name == "params" {
                return Err(DatasetError::Manifest("`params` is reserved".into()));
            }
            if self.variables[..i].iter().any(|w| w.name == v.name) {
                return Err(DatasetError::Manifest(format!(
                    "duplicate variable name `{}`",
                    v.name
                )));
            }
        }
        Ok(())
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    fn check_table(&self, table: &DataTable, which: &str) -> Result<(), DatasetError> {
        if table.dim() != self.variables.len() {
            return Err(DatasetError::Manifest(format!(
                "{which} table has {} input columns but the problem declares {} variables",
                table.dim(),
                self.variables.len()
            )));
        }
        Ok(())
    }
}

/// A problem with its tables loaded.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub problem: Problem,
    pub train: DataTable,
    pub test_id: Option<DataTable>,
    pub test_ood: Option<DataTable>,
}

impl ProblemData {
    pub fn new(
        problem: Problem,
        train: DataTable,
        test_id: Option<DataTable>,
        test_ood: Option<DataTable>,
    ) -> Result<ProblemData, DatasetError> {
        problem.validate()?;
        problem.check_table(&train, "train")?;
        if let Some(t) = &test_id {
            problem.check_table(t, "test_id")?;
        }
        if let Some(t) = &test_ood {
            problem.check_table(t, "test_ood")?;
        }
        Ok(ProblemData {
            problem,
            train,
            test_id,
            test_ood,
        })
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.problem.variable_names()
    }
}

/// Read a manifest and every table it references.
pub fn load_problem(manifest: &Path) -> Result<ProblemData, DatasetError> {
    let bytes = fs::read(manifest).map_err(|source| DatasetError::Io {
        path: manifest.to_path_buf(),
        source,
    })?;
    let problem: Problem =
        serde_json::from_slice(&bytes).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let train = load_table(&dir.join(&problem.files.train))?;
    let test_id = problem
        .files
        .test_id
        .as_ref()
        .map(|f| load_table(&dir.join(f)))
        .transpose()?;
    let test_ood = problem
        .files
        .test_ood
        .as_ref()
        .map(|f| load_table(&dir.join(f)))
        .transpose()?;
    ProblemData::new(problem, train, test_id, test_ood)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_rows() {
        let t = parse_table(b"[[1.0, 2.0],[3.0, 4.0]]").unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.dim(), 1);
        assert_eq!(t.targets(), vec![1.0, 3.0]);
    }

    #[test]
    fn parse_oscillator_row() {
        let t = parse_table(b"[[0.5, 1.0, 2.0, 3.0]]").unwrap();
        assert_eq!((t.n_rows(), t.dim()), (1, 3));
        assert_eq!(t.row(0), &[0.5, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_table(b"[[1.0],[2.0, 3.0]]"),
            Err(DatasetError::Ragged { row: 1, found: 2, expected: 1 })
        ));
        assert!(matches!(
            parse_table(b"[[1.0],[2.0]]"),
            Err(DatasetError::Row { row: 0, .. })
        ));
        assert!(matches!(
            parse_table(b"[[1.0, 2.0],[2.0, 3.0, 4.0]]"),
            Err(DatasetError::Ragged { row: 1, found: 3, expected: 2 })
        ));
        assert!(matches!(parse_table(b"[[1.0, 2.0"), Err(DatasetError::Syntax(_))));
        assert!(matches!(parse_table(b"{}"), Err(DatasetError::Syntax(_))));
        assert!(matches!(parse_table(b"[]"), Err(DatasetError::Empty)));
        assert!(matches!(
            parse_table(b"[[1.0, 2.0],[1.0, \"a\"]]"),
            Err(DatasetError::Row { row: 1, .. })
        ));
        assert!(matches!(
            parse_table(b"[[1.0, 2.0], 5]"),
            Err(DatasetError::Row { row: 1, .. })
        ));
        // out-of-range literals never become infinities
        assert!(parse_table(b"[[1.0, 1e999]]").is_err());
        assert!(matches!(
            DataTable::from_rows(vec![vec![1.0, f64::NAN]]),
            Err(DatasetError::NonFinite { row: 0, column: 1 })
        ));
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = parse_table(b"[[1.0, 2.0],[3.0, 4.0]]").unwrap();
        assert_eq!(inject_noise(&t, 0.0, 7), t);
    }

    #[test]
    fn noise_is_relative_and_seeded() {
        let rows = (0..100_000).map(|i| vec![1.0, i as f64]).collect();
        let t = DataTable::from_rows(rows).unwrap();
        let noisy = inject_noise(&t, 0.05, 1);
        assert_eq!(noisy, inject_noise(&t, 0.05, 1));
        assert_ne!(noisy, inject_noise(&t, 0.05, 2));
        let rel: Vec<f64> = noisy.rows().map(|r| r[0] - 1.0).collect();
        let s = describe(&rel);
        assert!((s.std - 0.05).abs() <= 0.002, "std {}", s.std);
        for (a, b) in t.rows().zip(noisy.rows()) {
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn stats_hand_values() {
        let t = DataTable::from_rows(vec![
            vec![1.0, 5.0, 1.0],
            vec![2.0, 5.0, 2.0],
            vec![3.0, 5.0, 3.0],
        ])
        .unwrap();
        let s = column_stats(&t);
        let y = &s.columns[0];
        assert_eq!((y.mean, y.min, y.max), (2.0, 1.0, 3.0));
        assert!((y.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.columns[1].std, 0.0);
        assert_eq!(s.correlation[0][1], 0.0);
        assert_eq!(s.correlation[1][1], 0.0);
        assert_eq!(s.correlation[0][2], 1.0);
        assert_eq!(s.correlation[0][0], 1.0);
    }

    #[test]
    fn manifest_validation() {
        let mut p = Problem {
            id: "p".into(),
            domain: Domain::Physics,
            target_name: "a".into(),
            target_description: "Acceleration".into(),
            variables: vec![
                Variable { name: "x".into(), description: "Position".into() },
                Variable { name: "x".into(), description: "Again".into() },
            ],
            files: SplitFiles { train: "train.json".into(), test_id: None, test_ood: None },
            ground_truth: None,
        };
        assert!(p.validate().is_err());
        p.variables[1].name = "v".into();
        assert!(p.validate().is_ok());
        let t = parse_table(b"[[1.0, 2.0]]").unwrap();
        assert!(ProblemData::new(p, t, None, None).is_err());
    }
}
