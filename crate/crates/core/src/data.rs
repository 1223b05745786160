//! Dataset ingestion and deterministic train/test splitting.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

/// Names of the datasets shipped under `data/`.
pub const BUNDLED_DATASETS: [&str; 3] = ["iris", "wine", "cancer"];

/// Environment variable that overrides the bundled data directory.
pub const DATA_DIR_ENV: &str = "FEBIM_DATA_DIR";

/// Stream tag separating split shuffles from other seeded streams.
const SPLIT_STREAM: u64 = 0x0053_504c_4954;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column `{0}` not found in header")]
    MissingColumn(String),
    #[error("cannot parse value {value:?} at row {row}, column `{col}`")]
    ParseError {
        row: usize,
        col: String,
        value: String,
    },
    #[error("non-finite value at row {row}, column `{col}`")]
    NonFinite { row: usize, col: String },
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
}

/// Labeled tabular samples with continuous features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// Row-major `[samples][features]`.
    pub features: Vec<Vec<f64>>,
    /// Class index per sample, in `[0, class_names.len())`.
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking shape and value invariants.
    pub fn new(
        name: impl Into<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let ds = Self {
            name: name.into(),
            features,
            labels,
            feature_names,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.feature_names.is_empty() {
            return Err(DataError::NoFeatures);
        }
        if self.class_names.is_empty() {
            return Err(DataError::Invalid("no classes".into()));
        }
        if self.features.len() != self.labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        let n = self.feature_names.len();
        let k = self.class_names.len();
        for (row, (x, &y)) in self.features.iter().zip(&self.labels).enumerate() {
            if x.len() != n {
                return Err(DataError::Invalid(format!(
                    "row {row} has {} features, expected {n}",
                    x.len()
                )));
            }
            if y >= k {
                return Err(DataError::Invalid(format!(
                    "row {row} label {y} out of range for {k} classes"
                )));
            }
            if let Some(j) = x.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    row,
                    col: self.feature_names[j].clone(),
                });
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Samples at `indices`, keeping the full class and feature vocabularies.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Parses CSV text with a header row. `label_column` defaults to the last
    /// column; classes are indexed in first-appearance order.
    pub fn from_csv_reader<R: Read>(
        name: impl Into<String>,
        reader: R,
        label_column: Option<&str>,
    ) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        let label_idx = match label_column {
            Some(col) => header
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| DataError::MissingColumn(col.to_owned()))?,
            None => header.len() - 1,
        };
        let feature_names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label_idx)
            .map(|(_, h)| h.clone())
            .collect();
        if feature_names.is_empty() {
            return Err(DataError::NoFeatures);
        }

        let mut class_index: HashMap<String, usize> = HashMap::new();
        let mut class_names = Vec::new();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let row = r + 1;
            let mut x = Vec::with_capacity(feature_names.len());
            for (j, cell) in record.iter().enumerate() {
                if j == label_idx {
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| DataError::ParseError {
                    row,
                    col: header[j].clone(),
                    value: cell.to_owned(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        row,
                        col: header[j].clone(),
                    });
                }
                x.push(v);
            }
            let label = &record[label_idx];
            let next = class_names.len();
            let y = *class_index.entry(label.to_owned()).or_insert_with(|| {
                class_names.push(label.to_owned());
                next
            });
            features.push(x);
            labels.push(y);
        }
        if labels.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        Dataset::new(name, features, labels, feature_names, class_names)
    }
}

/// Loads a CSV file; the dataset is named after the file stem.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_owned());
    Dataset::from_csv_reader(name, std::io::BufReader::new(file), label_column)
}

/// Directory holding the bundled CSVs, honoring `FEBIM_DATA_DIR`.
pub fn data_dir() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

/// Resolves a bundled dataset name (`iris`, `wine`, `cancer`) or a file path.
pub fn resolve_dataset_path(name_or_path: &str) -> PathBuf {
    let as_path = PathBuf::from(name_or_path);
    if as_path.exists() || !BUNDLED_DATASETS.contains(&name_or_path) {
        as_path
    } else {
        data_dir().join(format!("{name_or_path}.csv"))
    }
}

/// Loads a bundled dataset by name or a CSV by path.
pub fn load_dataset(name_or_path: &str, label_column: Option<&str>) -> Result<Dataset, DataError> {
    load_csv(resolve_dataset_path(name_or_path), label_column)
}

/// How to partition a dataset into train and test samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of samples held out for testing, in (0, 1).
    pub test_fraction: f64,
    pub seed: u64,
    pub epoch: u64,
    #[serde(default = "default_stratify")]
    pub stratify: bool,
}

fn default_stratify() -> bool {
    true
}

impl SplitSpec {
    pub fn new(test_fraction: f64, seed: u64, epoch: u64) -> Self {
        Self {
            test_fraction,
            seed,
            epoch,
            stratify: true,
        }
    }
}

/// Sample indices of each partition, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Computes the partition for `spec`.
///
/// Stratified mode rounds `test_fraction * n_c` per class and keeps at least
/// one training sample in every class. Unstratified mode shuffles globally and
/// fails if some class ends up absent from training.
pub fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(DataError::InfeasibleSplit(format!(
            "test_fraction {} not in (0, 1)",
            spec.test_fraction
        )));
    }
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(DataError::InfeasibleSplit(format!(
            "class `{}` has no samples",
            ds.class_names[c]
        )));
    }
    let mut rng = rng_for(&[SPLIT_STREAM, spec.seed, spec.epoch]);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if spec.stratify {
        for class in 0..ds.n_classes() {
            let mut members: Vec<usize> = (0..ds.n_samples())
                .filter(|&i| ds.labels[i] == class)
                .collect();
            members.shuffle(&mut rng);
            let n_test = round_half_up(spec.test_fraction * members.len() as f64)
                .min(members.len() - 1);
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
    } else {
        let mut all: Vec<usize> = (0..ds.n_samples()).collect();
        all.shuffle(&mut rng);
        let n_test =
            round_half_up(spec.test_fraction * all.len() as f64).min(all.len().saturating_sub(1));
        test.extend_from_slice(&all[..n_test]);
        train.extend_from_slice(&all[n_test..]);
        let mut seen = vec![false; ds.n_classes()];
        for &i in &train {
            seen[ds.labels[i]] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(DataError::InfeasibleSplit(format!(
                "class `{}` absent from the training partition",
                ds.class_names[c]
            )));
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Splits `ds` into `(train, test)` datasets.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    let idx = split_indices(ds, spec)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.test)))
}
