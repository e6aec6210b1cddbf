use serde::{Deserialize, Serialize};

use super::{ConnectionId, TrajectoryError, TrajectoryStore};
use crate::data::Split;
use crate::nnet::{evaluate, DenseParams, LayerSpec, Mask, TrainObserver};

/// Baseline minus perturbed weight, one value per common iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffSeries {
    pub connection: ConnectionId,
    pub values: Vec<f64>,
}

/// Difference series for every connection tracked by both stores.
pub fn diff(base: &TrajectoryStore, pert: &TrajectoryStore) -> Result<Vec<DiffSeries>, TrajectoryError> {
    if base.connections() != pert.connections() {
        return Err(TrajectoryError::ConnectionMismatch);
    }
    let n = base.n_iterations().min(pert.n_iterations());
    Ok(base
        .connections()
        .iter()
        .zip(base.columns().iter().zip(pert.columns()))
        .map(|(&connection, (b, p))| DiffSeries {
            connection,
            values: b[..n].iter().zip(&p[..n]).map(|(x, y)| x - y).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSeries {
    pub source: ConnectionId,
    pub window_len: usize,
    pub windows: Vec<Vec<f64>>,
}

impl WindowedSeries {
    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }
}

/// Split `values` into `floor(len / w)` consecutive windows; the tail is dropped.
pub fn window(source: ConnectionId, values: &[f64], w: usize) -> Result<WindowedSeries, TrajectoryError> {
    if w == 0 {
        return Err(TrajectoryError::ZeroWindow);
    }
    if values.len() < w {
        return Err(TrajectoryError::TooShort {
            len: values.len(),
            window: w,
        });
    }
    Ok(WindowedSeries {
        source,
        window_len: w,
        windows: values.chunks_exact(w).map(<[f64]>::to_vec).collect(),
    })
}

/// Which accuracy the misclassification series is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisclassificationSource {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracySeries {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

impl AccuracySeries {
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn misclassification(&self, source: MisclassificationSource) -> Vec<f64> {
        let acc = match source {
            MisclassificationSource::Train => &self.train,
            MisclassificationSource::Test => &self.test,
        };
        acc.iter().map(|a| 1.0 - a).collect()
    }

    /// Keep only the first `k` windows.
    pub fn truncate(&mut self, k: usize) {
        self.train.truncate(k);
        self.test.truncate(k);
    }
}

/// Accuracy from explicit parameter snapshots. `snapshots[k].0` is the number of
/// recorded samples at the time of the snapshot and must equal `(k + 1) * w`.
pub fn accuracy_per_window(
    spec: &LayerSpec,
    mask: &Mask,
    snapshots: &[(usize, DenseParams)],
    split: &Split,
    w: usize,
) -> Result<AccuracySeries, TrajectoryError> {
    if w == 0 {
        return Err(TrajectoryError::ZeroWindow);
    }
    let mut out = AccuracySeries::default();
    for (k, (count, params)) in snapshots.iter().enumerate() {
        let expected = (k + 1) * w;
        if *count != expected {
            return Err(TrajectoryError::SnapshotMismatch { expected, found: *count });
        }
        out.train.push(evaluate(spec, params, mask, &split.train)?.accuracy);
        out.test.push(evaluate(spec, params, mask, &split.test)?.accuracy);
    }
    Ok(out)
}

/// Observer that evaluates train and test accuracy whenever the number of
/// recorded samples reaches a multiple of the window length, so no parameter
/// snapshots need to be kept.
pub struct WindowSnapshots<'a> {
    spec: &'a LayerSpec,
    mask: &'a Mask,
    split: &'a Split,
    window_len: usize,
    count: usize,
    series: AccuracySeries,
    error: Option<TrajectoryError>,
}

impl<'a> WindowSnapshots<'a> {
    pub fn new(spec: &'a LayerSpec, mask: &'a Mask, split: &'a Split, window_len: usize) -> Result<Self, TrajectoryError> {
        if window_len == 0 {
            return Err(TrajectoryError::ZeroWindow);
        }
        Ok(Self {
            spec,
            mask,
            split,
            window_len,
            count: 0,
            series: AccuracySeries::default(),
            error: None,
        })
    }

    pub fn finish(self) -> Result<AccuracySeries, TrajectoryError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.series),
        }
    }
}

impl TrainObserver for WindowSnapshots<'_> {
    fn on_iteration(&mut self, _: usize, params: &DenseParams) {
        self.count += 1;
        if self.error.is_some() || !self.count.is_multiple_of(self.window_len) {
            return;
        }
        let evals = evaluate(self.spec, params, self.mask, &self.split.train)
            .and_then(|tr| Ok((tr, evaluate(self.spec, params, self.mask, &self.split.test)?)));
        match evals {
            Ok((tr, te)) => {
                self.series.train.push(tr.accuracy);
                self.series.test.push(te.accuracy);
            }
            Err(e) => self.error = Some(e.into()),
        }
    }
}
