//! Tabular dataset loading, feature encoding and stratified splitting.
//!
//! Datasets are read from CSV with a mandatory header row. Columns listed as
//! categorical keep their raw tokens; every other column must parse as a
//! finite real number. Labels are remapped to dense integers in order of first
//! appearance.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("categorical column `{0}` not found in header")]
    MissingCategoricalColumn(String),
    #[error("row {row}: missing value in column `{column}`")]
    MissingCell { row: usize, column: String },
    #[error("row {row}: non-numeric value `{value}` in numeric column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("fewer than 2 classes in label column")]
    TooFewClasses,
    #[error("fit rows must be non-empty and within the dataset")]
    InvalidFitRows,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("class {class} would receive no training rows")]
    EmptyTrainClass { class: usize },
    #[error("cannot build {k} folds: {reason}")]
    InvalidFolds { k: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, TabularError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Column storage. Categorical cells are stored as indices into `vocabulary`.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical {
        vocabulary: Vec<String>,
        codes: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical { .. } => ColumnKind::Categorical,
        }
    }
}

/// A fully loaded tabular dataset with dense integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub columns: Vec<Column>,
    pub labels: Vec<usize>,
    /// Original label tokens, indexed by dense class id.
    pub class_names: Vec<String>,
}

impl TabularDataset {
    /// Builds a dataset from in-memory columns, checking the label invariants.
    pub fn new(columns: Vec<Column>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let n_classes = class_names.len();
        if n_classes < 2 {
            return Err(TabularError::TooFewClasses);
        }
        let mut seen = vec![false; n_classes];
        for &y in &labels {
            if y >= n_classes {
                return Err(TabularError::Manifest(format!(
                    "label {y} outside 0..{n_classes}"
                )));
            }
            seen[y] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(TabularError::Manifest("a declared class has no rows".into()));
        }
        for col in &columns {
            let len = match &col.data {
                ColumnData::Numeric(v) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(TabularError::Manifest(format!(
                            "non-finite value in column `{}`",
                            col.name
                        )));
                    }
                    v.len()
                }
                ColumnData::Categorical { vocabulary, codes } => {
                    if codes.iter().any(|&c| c >= vocabulary.len()) {
                        return Err(TabularError::Manifest(format!(
                            "category code out of vocabulary in `{}`",
                            col.name
                        )));
                    }
                    codes.len()
                }
            };
            if len != labels.len() {
                return Err(TabularError::Manifest(format!(
                    "column `{}` has {len} rows, labels have {}",
                    col.name,
                    labels.len()
                )));
            }
        }
        Ok(Self {
            columns,
            labels,
            class_names,
        })
    }

    /// Convenience constructor for all-numeric data given as rows.
    pub fn from_numeric_rows(rows: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let columns = (0..d)
            .map(|k| Column {
                name: format!("x{k}"),
                data: ColumnData::Numeric(rows.iter().map(|r| r[k]).collect()),
            })
            .collect();
        let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let class_names = (0..n_classes).map(|k| k.to_string()).collect();
        Self::new(columns, labels.to_vec(), class_names)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
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
}

/// JSON dataset manifest. `csv_path` is resolved relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub csv_path: PathBuf,
    pub label_column: String,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
}

impl DatasetManifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TabularError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| TabularError::Manifest(e.to_string()))?;
        if manifest.csv_path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.csv_path = dir.join(&manifest.csv_path);
            }
        }
        Ok(manifest)
    }

    pub fn load(&self) -> Result<TabularDataset> {
        let categorical: BTreeSet<String> = self.categorical_columns.iter().cloned().collect();
        load_csv(&self.csv_path, &self.label_column, &categorical)
    }
}

pub fn load_csv(
    path: &Path,
    label_column: &str,
    categorical_columns: &BTreeSet<String>,
) -> Result<TabularDataset> {
    let file = File::open(path).map_err(|source| TabularError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, label_column, categorical_columns)
}

/// Parses CSV content from any reader; see [`load_csv`].
pub fn read_csv<R: Read>(
    reader: R,
    label_column: &str,
    categorical_columns: &BTreeSet<String>,
) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| TabularError::MissingLabelColumn(label_column.to_string()))?;
    for name in categorical_columns {
        if !header.iter().any(|h| h == name) {
            return Err(TabularError::MissingCategoricalColumn(name.clone()));
        }
    }

    let feature_idx: Vec<usize> = (0..header.len()).filter(|&k| k != label_idx).collect();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); feature_idx.len()];
    let mut label_tokens = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(TabularError::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (slot, &k) in feature_idx.iter().enumerate() {
            let cell = record[k].trim();
            if cell.is_empty() {
                return Err(TabularError::MissingCell {
                    row,
                    column: header[k].clone(),
                });
            }
            raw[slot].push(cell.to_string());
        }
        let label = record[label_idx].trim();
        if label.is_empty() {
            return Err(TabularError::MissingCell {
                row,
                column: label_column.to_string(),
            });
        }
        label_tokens.push(label.to_string());
    }

    let mut columns = Vec::with_capacity(feature_idx.len());
    for (slot, &k) in feature_idx.iter().enumerate() {
        let name = header[k].clone();
        let cells = std::mem::take(&mut raw[slot]);
        let data = if categorical_columns.contains(&name) {
            let (vocabulary, codes) = dense_codes(&cells);
            ColumnData::Categorical { vocabulary, codes }
        } else {
            let mut values = Vec::with_capacity(cells.len());
            for (row, cell) in cells.iter().enumerate() {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        return Err(TabularError::NonNumeric {
                            row,
                            column: name.clone(),
                            value: cell.clone(),
                        })
                    }
                }
            }
            ColumnData::Numeric(values)
        };
        columns.push(Column { name, data });
    }

    let (class_names, labels) = dense_codes(&label_tokens);
    if class_names.len() < 2 {
        return Err(TabularError::TooFewClasses);
    }
    TabularDataset::new(columns, labels, class_names)
}

/// Maps tokens to dense codes in order of first appearance.
fn dense_codes(tokens: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut vocabulary = Vec::new();
    let codes = tokens
        .iter()
        .map(|t| {
            *index.entry(t.as_str()).or_insert_with(|| {
                vocabulary.push(t.clone());
                vocabulary.len() - 1
            })
        })
        .collect();
    (vocabulary, codes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnEncoding {
    Numeric { mean: f64, std: f64 },
    Categorical { vocabulary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub span: Range<usize>,
    pub encoding: ColumnEncoding,
}

/// Real-valued design matrix plus the transform that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub encoding_map: Vec<EncodedColumn>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Recovers the category token of a one-hot encoded column for `row`.
    pub fn decode_category(&self, row: usize, column: usize) -> Option<&str> {
        let col = self.encoding_map.get(column)?;
        let ColumnEncoding::Categorical { vocabulary } = &col.encoding else {
            return None;
        };
        let block = self.values.row(row);
        col.span
            .clone()
            .position(|k| block[k] == 1.0)
            .map(|p| vocabulary[p].as_str())
    }
}

/// Standardizes numeric columns with statistics from `fit_rows` and one-hot
/// encodes categorical columns over the full vocabulary.
///
/// Constant numeric columns (population std of zero) use std = 1 and therefore
/// encode to all zeros over the fit rows.
pub fn encode(dataset: &TabularDataset, fit_rows: &[usize]) -> Result<FeatureMatrix> {
    let n = dataset.n_rows();
    if fit_rows.is_empty() || fit_rows.iter().any(|&r| r >= n) {
        return Err(TabularError::InvalidFitRows);
    }
    let width: usize = dataset
        .columns
        .iter()
        .map(|c| match &c.data {
            ColumnData::Numeric(_) => 1,
            ColumnData::Categorical { vocabulary, .. } => vocabulary.len(),
        })
        .sum();

    let mut values = Array2::<f64>::zeros((n, width));
    let mut encoding_map = Vec::with_capacity(dataset.columns.len());
    let mut offset = 0;
    for col in &dataset.columns {
        match &col.data {
            ColumnData::Numeric(xs) => {
                let m = fit_rows.len() as f64;
                let mean = fit_rows.iter().map(|&r| xs[r]).sum::<f64>() / m;
                let var = fit_rows.iter().map(|&r| (xs[r] - mean).powi(2)).sum::<f64>() / m;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                for (r, &x) in xs.iter().enumerate() {
                    values[[r, offset]] = (x - mean) / std;
                }
                encoding_map.push(EncodedColumn {
                    name: col.name.clone(),
                    span: offset..offset + 1,
                    encoding: ColumnEncoding::Numeric { mean, std },
                });
                offset += 1;
            }
            ColumnData::Categorical { vocabulary, codes } => {
                for (r, &code) in codes.iter().enumerate() {
                    values[[r, offset + code]] = 1.0;
                }
                encoding_map.push(EncodedColumn {
                    name: col.name.clone(),
                    span: offset..offset + vocabulary.len(),
                    encoding: ColumnEncoding::Categorical {
                        vocabulary: vocabulary.clone(),
                    },
                });
                offset += vocabulary.len();
            }
        }
    }
    Ok(FeatureMatrix {
        values,
        encoding_map,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitIndices {
    pub fn n_rows(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn train_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_rows()];
        for &i in &self.train {
            mask[i] = true;
        }
        mask
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Groups row positions by label, preserving row order within each class.
fn rows_by_class(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

/// Per-class stratified train/test split. Each class contributes
/// `round_half_up(count * train_fraction)` rows to train.
pub fn stratified_split(
    dataset: &TabularDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TabularError::InvalidFraction(train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut rows) in rows_by_class(&dataset.labels, dataset.n_classes())
        .into_iter()
        .enumerate()
    {
        let n_train = round_half_up(rows.len() as f64 * train_fraction).min(rows.len());
        if n_train == 0 {
            return Err(TabularError::EmptyTrainClass { class });
        }
        rows.shuffle(&mut rng);
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

/// Stratified k-fold assignment over `labels`; returns held-out position lists.
///
/// Rows of each class are shuffled and dealt round-robin, continuing the
/// rotation across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(TabularError::InvalidFolds {
            k,
            reason: "k must be at least 2".into(),
        });
    }
    if labels.len() < k {
        return Err(TabularError::InvalidFolds {
            k,
            reason: format!("only {} rows", labels.len()),
        });
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut rows in rows_by_class(labels, n_classes) {
        rows.shuffle(&mut rng);
        for r in rows {
            folds[next].push(r);
            next = (next + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
