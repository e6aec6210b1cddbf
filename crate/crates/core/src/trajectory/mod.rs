//! Per-connection weight trajectories: recording during training, perturbed
//! replay, difference series, windowing, and per-window accuracy.

mod io;
mod replay;
mod window;

use std::collections::HashMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::{DenseParams, LayerSpec, NnetError, TrainObserver};

pub use io::{read_store, write_store, write_store_csv, TRAJECTORY_MAGIC};
pub use replay::{per_weight_replay, perturbed_replay, Replay};
pub use window::{
    accuracy_per_window, diff, window, AccuracySeries, DiffSeries, MisclassificationSource, WindowSnapshots, WindowedSeries,
};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("iteration {got} recorded after {last}; iterations must strictly increase")]
    OutOfOrder { last: usize, got: usize },
    #[error("series of length {len} is shorter than the window length {window}")]
    TooShort { len: usize, window: usize },
    #[error("window length must be >= 1")]
    ZeroWindow,
    #[error("stores track different connections")]
    ConnectionMismatch,
    #[error("connection {0} is not tracked")]
    Untracked(ConnectionId),
    #[error("connection {0} is outside the layer spec")]
    OutOfBounds(ConnectionId),
    #[error("expected snapshot for iteration {expected}, found {found}")]
    SnapshotMismatch { expected: usize, found: usize },
    #[error("trajectory file format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

/// A weight connection, 1-based: `layer` counts weight matrices from the input,
/// the weight runs from neuron `from` of the previous layer to neuron `to`.
/// Ordering is lexicographic in `(layer, to, from)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConnectionId {
    pub layer: usize,
    pub to: usize,
    pub from: usize,
}

impl ConnectionId {
    pub const fn new(layer: usize, to: usize, from: usize) -> Self {
        Self { layer, to, from }
    }

    /// First weight of the first layer, the one the replay perturbs.
    pub const FIRST: ConnectionId = ConnectionId::new(1, 1, 1);

    pub fn in_bounds(&self, spec: &LayerSpec) -> bool {
        self.layer >= 1
            && self.layer <= spec.n_layers()
            && self.to >= 1
            && self.to <= spec.sizes[self.layer]
            && self.from >= 1
            && self.from <= spec.sizes[self.layer - 1]
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.layer, self.to, self.from)
    }
}

/// Every connection of `spec` in lexicographic order.
pub fn all_connections(spec: &LayerSpec) -> Vec<ConnectionId> {
    let mut out = Vec::with_capacity(spec.n_connections());
    for layer in 1..=spec.n_layers() {
        for to in 1..=spec.sizes[layer] {
            for from in 1..=spec.sizes[layer - 1] {
                out.push(ConnectionId::new(layer, to, from));
            }
        }
    }
    out
}

/// Which connections a store records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Tracking {
    #[default]
    All,
    Subset { connections: Vec<ConnectionId> },
    /// `n` connections drawn uniformly from the non-output layers, plus every
    /// output-layer connection.
    Sampled { n: usize, seed: u64 },
}

impl Tracking {
    pub fn resolve(&self, spec: &LayerSpec) -> Result<Vec<ConnectionId>, TrajectoryError> {
        let all = all_connections(spec);
        let mut out = match self {
            Tracking::All => all,
            Tracking::Subset { connections } => {
                if let Some(bad) = connections.iter().find(|c| !c.in_bounds(spec)) {
                    return Err(TrajectoryError::OutOfBounds(*bad));
                }
                connections.clone()
            }
            Tracking::Sampled { n, seed } => {
                let last = spec.n_layers();
                let (inner, output): (Vec<_>, Vec<_>) = all.into_iter().partition(|c| c.layer < last);
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let take = (*n).min(inner.len());
                let mut picked: Vec<ConnectionId> = sample(&mut rng, inner.len(), take).into_iter().map(|i| inner[i]).collect();
                picked.extend(output);
                picked
            }
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// Column store of weight values, one series per tracked connection.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStore {
    pub run_id: String,
    connections: Vec<ConnectionId>,
    index: HashMap<ConnectionId, usize>,
    series: Vec<Vec<f64>>,
    last_iteration: Option<usize>,
}

impl TrajectoryStore {
    pub fn new(run_id: impl Into<String>, connections: Vec<ConnectionId>) -> Self {
        let index = connections.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let series = vec![Vec::new(); connections.len()];
        Self {
            run_id: run_id.into(),
            connections,
            index,
            series,
            last_iteration: None,
        }
    }

    pub fn for_spec(run_id: impl Into<String>, spec: &LayerSpec, tracking: &Tracking) -> Result<Self, TrajectoryError> {
        Ok(Self::new(run_id, tracking.resolve(spec)?))
    }

    pub(crate) fn from_columns(run_id: String, connections: Vec<ConnectionId>, series: Vec<Vec<f64>>) -> Self {
        let mut store = Self::new(run_id, connections);
        let n = series.first().map_or(0, Vec::len);
        store.series = series;
        store.last_iteration = n.checked_sub(1);
        store
    }

    /// Append the current value of every tracked connection.
    pub fn record(&mut self, iteration: usize, params: &DenseParams) -> Result<(), TrajectoryError> {
        if let Some(last) = self.last_iteration {
            if iteration <= last {
                return Err(TrajectoryError::OutOfOrder { last, got: iteration });
            }
        }
        for (col, &c) in self.series.iter_mut().zip(&self.connections) {
            col.push(params.weight(c));
        }
        self.last_iteration = Some(iteration);
        Ok(())
    }

    pub fn connections(&self) -> &[ConnectionId] {
        &self.connections
    }

    pub fn n_connections(&self) -> usize {
        self.connections.len()
    }

    pub fn n_iterations(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn series(&self, c: ConnectionId) -> Option<&[f64]> {
        self.index.get(&c).map(|&i| self.series[i].as_slice())
    }

    pub(crate) fn columns(&self) -> &[Vec<f64>] {
        &self.series
    }

    /// Drop samples beyond the first `n`.
    pub fn truncate(&mut self, n: usize) {
        for col in &mut self.series {
            col.truncate(n);
        }
    }
}

impl TrainObserver for TrajectoryStore {
    fn on_iteration(&mut self, iteration: usize, params: &DenseParams) {
        self.record(iteration, params)
            .expect("training reports strictly increasing iterations");
    }
}
