//! Dataset loading: manifest-driven parsing, one-hot encoding, stratified
//! splitting and train-fitted standardization.

mod cache;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

pub use cache::{read_split, write_split};
pub use manifest::{BinaryRule, DatasetManifest, FeatureColumn, FeatureKind};

/// Standardized features with binary sensitive attribute and label.
///
/// `ids` are the 0-based data-row indices in the source file, so they stay
/// stable when rows with missing values are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub ids: Vec<u64>,
    pub x: Array2<f64>,
    pub s: Vec<u8>,
    pub y: Vec<u8>,
    pub feature_names: Vec<String>,
    /// Per-column (mean, stddev) fitted on the training split.
    pub standardization: Vec<(f64, f64)>,
}

impl DataSplit {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by position, in the given order.
    pub fn select(&self, rows: &[usize]) -> DataSplit {
        DataSplit {
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
            x: self.x.select(Axis(0), rows),
            s: rows.iter().map(|&i| self.s[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Map raw values to {0, 1}; fails on the first value outside the rule.
pub fn binarize_sensitive<S: AsRef<str>>(raw: &[S], rule: &BinaryRule) -> Result<Vec<u8>> {
    binarize(raw, rule, "sensitive")
}

fn binarize<S: AsRef<str>>(raw: &[S], rule: &BinaryRule, column: &str) -> Result<Vec<u8>> {
    raw.iter()
        .map(|v| {
            rule.apply(v.as_ref()).ok_or_else(|| Error::Unbinarizable {
                column: column.to_string(),
                value: v.as_ref().to_string(),
            })
        })
        .collect()
}

/// Raw rows restricted to the manifest's columns, missing rows removed.
struct RawTable {
    ids: Vec<u64>,
    features: Vec<Vec<String>>,
    sensitive: Vec<String>,
    label: Vec<String>,
    rows_read: usize,
}

fn read_raw(manifest: &DatasetManifest) -> Result<RawTable> {
    let path = &manifest.source_path;
    let csv_err = |source| Error::Csv {
        path: path.clone(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => csv_err(e),
        })?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let feature_idx: Vec<usize> = manifest
        .features
        .iter()
        .map(|f| index_of(&f.name))
        .collect::<Result<_>>()?;
    let s_idx = index_of(&manifest.sensitive_column)?;
    let y_idx = index_of(&manifest.label_column)?;

    let is_missing = |v: &str| manifest.missing_markers.iter().any(|m| m == v);
    let mut table = RawTable {
        ids: Vec::new(),
        features: Vec::new(),
        sensitive: Vec::new(),
        label: Vec::new(),
        rows_read: 0,
    };
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        table.rows_read += 1;
        let get = |i: usize| record.get(i).unwrap_or("");
        let used = feature_idx.iter().chain([&s_idx, &y_idx]);
        if used.into_iter().any(|&i| is_missing(get(i))) {
            continue;
        }
        table.ids.push(row as u64);
        table
            .features
            .push(feature_idx.iter().map(|&i| get(i).to_string()).collect());
        table.sensitive.push(get(s_idx).to_string());
        table.label.push(get(y_idx).to_string());
    }
    Ok(table)
}

/// Expand raw feature columns into a dense matrix. Categorical columns are
/// fully one-hot encoded over the sorted set of observed categories.
fn encode(manifest: &DatasetManifest, table: &RawTable) -> Result<(Array2<f64>, Vec<String>)> {
    let n = table.ids.len();
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (j, feature) in manifest.features.iter().enumerate() {
        match feature.kind {
            FeatureKind::Numeric => {
                let mut col = Vec::with_capacity(n);
                for row in &table.features {
                    let v: f64 = row[j].parse().map_err(|_| {
                        Error::parse(
                            format!("numeric column `{}`", feature.name),
                            format!("`{}` is not a number", row[j]),
                        )
                    })?;
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("column `{}`", feature.name)));
                    }
                    col.push(v);
                }
                names.push(feature.name.clone());
                columns.push(col);
            }
            FeatureKind::Categorical => {
                let categories: BTreeSet<&str> =
                    table.features.iter().map(|r| r[j].as_str()).collect();
                for cat in categories {
                    names.push(format!("{}={}", feature.name, cat));
                    columns.push(
                        table
                            .features
                            .iter()
                            .map(|r| if r[j] == cat { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
    }
    let m = columns.len();
    let x = Array2::from_shape_fn((n, m), |(i, j)| columns[j][i]);
    Ok((x, names))
}

/// Stratify rows by the joint (s, y) cell and shuffle each cell with the
/// split stream; the first `fraction` of each cell goes to train.
fn stratified_split(s: &[u8], y: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut cells: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for i in 0..s.len() {
        cells.entry((s[i], y[i])).or_default().push(i);
    }
    let mut rng = rng::stream(seed, "split");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut rows) in cells {
        rows.shuffle(&mut rng);
        let cut = (rows.len() as f64 * fraction).round() as usize;
        train.extend_from_slice(&rows[..cut]);
        test.extend_from_slice(&rows[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Population mean and stddev of each column; near-constant columns get a
/// stddev of 1.
pub fn fit_standardization(x: &Array2<f64>) -> Vec<(f64, f64)> {
    let n = x.nrows() as f64;
    x.columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        })
        .collect()
}

pub fn apply_standardization(x: &mut Array2<f64>, params: &[(f64, f64)]) {
    for (mut col, &(mean, sd)) in x.columns_mut().into_iter().zip(params) {
        col.mapv_inplace(|v| (v - mean) / sd);
    }
}

/// Load, encode, split and standardize a dataset.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<(DataSplit, DataSplit)> {
    load_dataset_with_report(manifest).map(|(train, test, _)| (train, test))
}

pub fn load_dataset_with_report(
    manifest: &DatasetManifest,
) -> Result<(DataSplit, DataSplit, LoadReport)> {
    manifest.validate()?;
    let table = read_raw(manifest)?;
    let s = binarize(
        &table.sensitive,
        &manifest.privileged,
        &manifest.sensitive_column,
    )?;
    let y = binarize(&table.label, &manifest.favorable, &manifest.label_column)?;
    let (x, feature_names) = encode(manifest, &table)?;

    let (train_rows, test_rows) =
        stratified_split(&s, &y, manifest.split_fraction, manifest.split_seed);
    if train_rows.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if test_rows.is_empty() {
        return Err(Error::EmptySplit("test".into()));
    }

    let take = |rows: &[usize]| DataSplit {
        ids: rows.iter().map(|&i| table.ids[i]).collect(),
        x: x.select(Axis(0), rows),
        s: rows.iter().map(|&i| s[i]).collect(),
        y: rows.iter().map(|&i| y[i]).collect(),
        feature_names: feature_names.clone(),
        standardization: Vec::new(),
    };
    let mut train = take(&train_rows);
    let mut test = take(&test_rows);
    let params = fit_standardization(&train.x);
    apply_standardization(&mut train.x, &params);
    apply_standardization(&mut test.x, &params);
    train.standardization = params.clone();
    test.standardization = params;

    let report = LoadReport {
        rows_read: table.rows_read,
        rows_dropped_missing: table.rows_read - table.ids.len(),
        train_rows: train.len(),
        test_rows: test.len(),
    };
    log::info!(
        "loaded {}: {} rows read, {} dropped for missing values, {} train / {} test",
        manifest.name,
        report.rows_read,
        report.rows_dropped_missing,
        report.train_rows,
        report.test_rows
    );
    Ok((train, test, report))
}

/// Convenience for manifests stored on disk.
pub fn load_manifest_file(path: &Path) -> Result<(DataSplit, DataSplit)> {
    load_dataset(&DatasetManifest::load(path)?)
}
