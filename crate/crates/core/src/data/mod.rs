//! Datasets: ingestion, stratified splitting with train-only normalization,
//! and deterministic synthetic generators used as test oracles.

mod csv_loader;
mod idx;
mod split;
pub mod synthetic;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_loader::{load_csv, CsvLoad, CsvSchema};
pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use split::{split, stratified_subsample, Split};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric value `{value}` in column `{column}` (declare it categorical)")]
    NonNumeric { column: String, value: String },
    #[error("dataset is empty after dropping rows with missing values")]
    Empty,
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("truncated IDX file {path}: expected {expected} payload bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("class {class} has {count} samples; stratified split needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Per-feature affine normalization `x' = (x - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    #[default]
    ZScore,
    MinMax,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub kind: NormalizationKind,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    /// Statistics of `features`, one entry per column. Zero-spread columns get scale 1.
    pub fn fit(kind: NormalizationKind, features: &Array2<f64>) -> Self {
        let n_features = features.ncols();
        let mut center = vec![0.0; n_features];
        let mut scale = vec![1.0; n_features];
        for (j, col) in features.axis_iter(Axis(1)).enumerate() {
            let (c, s) = match kind {
                NormalizationKind::ZScore => {
                    let n = col.len() as f64;
                    let mean = col.sum() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
                NormalizationKind::MinMax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
                NormalizationKind::None => (0.0, 1.0),
            };
            center[j] = c;
            scale[j] = if s > 0.0 && s.is_finite() { s } else { 1.0 };
        }
        Self {
            kind,
            center,
            scale,
        }
    }

    pub fn apply(&self, features: &mut Array2<f64>) {
        for mut row in features.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.center[j]) / self.scale[j];
            }
        }
    }
}

/// A labelled classification dataset, samples in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self, DataError> {
        let names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        let class_names = (0..n_classes).map(|c| c.to_string()).collect();
        let ds = Self {
            features,
            labels,
            n_classes,
            feature_names: names,
            class_names,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.features.nrows() != self.labels.len() {
            return Err(DataError::InvalidParam(format!(
                "{} feature rows but {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if self.labels.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(DataError::InvalidParam(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidParam("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Keep only the first `n` features (e.g. Iris with 3 features).
    pub fn take_features(&self, n: usize) -> Result<Self, DataError> {
        if n == 0 || n > self.n_features() {
            return Err(DataError::InvalidParam(format!(
                "cannot keep {n} of {} features",
                self.n_features()
            )));
        }
        let cols: Vec<usize> = (0..n).collect();
        Ok(Self {
            features: self.features.select(Axis(1), &cols),
            feature_names: self.feature_names[..n].to_vec(),
            ..self.clone()
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
