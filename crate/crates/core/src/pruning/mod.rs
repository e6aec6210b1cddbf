//! Masks from causality results and from the random and magnitude baselines,
//! connection counting, and the end-to-end pruning pipeline.

mod pipeline;

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{CausalityError, GrangerResult};
use crate::chaos::ChaosError;
use crate::nnet::{DenseParams, LayerSpec, Mask, NnetError};
use crate::trajectory::{all_connections, ConnectionId, TrajectoryError};

pub use pipeline::{analyze, probe_epochs_for, Analysis, run_baseline, run_legcnet, BaselineRun, LegcnetRun, PipelineConfig, SeriesSource};

#[derive(Debug, Error)]
pub enum PruningError {
    #[error("cannot prune {requested} of {available} connections")]
    TooMany { requested: usize, available: usize },
    #[error("connection {0} appears more than once")]
    Duplicate(ConnectionId),
    #[error("connection {0} is outside the layer spec")]
    OutOfBounds(ConnectionId),
    #[error(
        "probe run yields {windows} windows of {window_len} iterations, fewer than the {needed} the causality test needs; \
         use a smaller window_len or more probe epochs"
    )]
    ProbeTooShort { windows: usize, window_len: usize, needed: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Chaos(#[from] ChaosError),
    #[error(transparent)]
    Causality(#[from] CausalityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum PruneStrategy {
    LegcnetFt,
    /// `probe_epochs = None` picks 10% of the dense epoch count (at least 1).
    LegcnetPt {
        probe_epochs: Option<usize>,
    },
    Random {
        seed: u64,
    },
    Magnitude,
}

impl PruneStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PruneStrategy::LegcnetFt => "legcnet-ft",
            PruneStrategy::LegcnetPt { .. } => "legcnet-pt",
            PruneStrategy::Random { .. } => "random",
            PruneStrategy::Magnitude => "magnitude",
        }
    }

    pub fn validate(&self) -> Result<(), PruningError> {
        if let PruneStrategy::LegcnetPt { probe_epochs: Some(0) } = self {
            return Err(PruningError::InvalidStrategy("probe_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub strategy: String,
    #[serde(skip)]
    pub mask: Mask,
    pub pruned: Vec<ConnectionId>,
    pub n_pruned: usize,
    pub pruned_fraction: f64,
    pub flops_dense: usize,
    pub flops_sparse: usize,
    /// Connections that met the pruning criterion but were kept so no layer
    /// or output neuron loses every input.
    pub retained_for_safety: Vec<ConnectionId>,
    pub granger: Vec<GrangerResult>,
}

impl PruneReport {
    pub fn safety_triggered(&self) -> bool {
        !self.retained_for_safety.is_empty()
    }
}

/// Kept connections; biases are not counted.
pub fn flops(spec: &LayerSpec, mask: &Mask) -> Result<usize, PruningError> {
    mask.check(spec)?;
    Ok(mask.kept())
}

/// Drop candidates in order of decreasing `priority` (highest is kept first)
/// until no layer is empty and no output neuron is disconnected.
fn apply_safety(spec: &LayerSpec, candidates: &[ConnectionId], priority: impl Fn(ConnectionId) -> f64) -> (Vec<ConnectionId>, Vec<ConnectionId>) {
    let mut pruned: Vec<ConnectionId> = candidates.to_vec();
    let mut retained = Vec::new();
    let by_priority = |a: &ConnectionId, b: &ConnectionId| {
        priority(*b)
            .partial_cmp(&priority(*a))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    let retain_one = |group: Vec<ConnectionId>, pruned: &mut Vec<ConnectionId>, retained: &mut Vec<ConnectionId>| {
        if let Some(keep) = group.into_iter().min_by(by_priority) {
            pruned.retain(|&c| c != keep);
            retained.push(keep);
        }
    };
    let out_layer = spec.n_layers();
    for to in 1..=spec.outputs() {
        let into: Vec<ConnectionId> = pruned.iter().copied().filter(|c| c.layer == out_layer && c.to == to).collect();
        if into.len() == spec.sizes[out_layer - 1] {
            retain_one(into, &mut pruned, &mut retained);
        }
    }
    for layer in 1..=out_layer {
        let (rows, cols) = spec.weight_shape(layer - 1);
        let in_layer: Vec<ConnectionId> = pruned.iter().copied().filter(|c| c.layer == layer).collect();
        if in_layer.len() == rows * cols {
            retain_one(in_layer, &mut pruned, &mut retained);
        }
    }
    pruned.sort_unstable();
    retained.sort_unstable();
    (pruned, retained)
}

fn build_report(spec: &LayerSpec, strategy: &str, candidates: &[ConnectionId], priority: impl Fn(ConnectionId) -> f64, granger: Vec<GrangerResult>) -> PruneReport {
    let (pruned, retained_for_safety) = apply_safety(spec, candidates, priority);
    if !retained_for_safety.is_empty() {
        log::warn!(
            "{strategy}: kept {} connection(s) to avoid disconnecting a layer or output neuron",
            retained_for_safety.len()
        );
    }
    let mut mask = Mask::full(spec);
    for &c in &pruned {
        mask.set(c, false);
    }
    let flops_dense = spec.n_connections();
    let n_pruned = pruned.len();
    PruneReport {
        strategy: strategy.to_string(),
        mask,
        pruned,
        n_pruned,
        pruned_fraction: n_pruned as f64 / flops_dense as f64,
        flops_dense,
        flops_sparse: flops_dense - n_pruned,
        retained_for_safety,
        granger,
    }
}

/// Prune every connection whose exponent series Granger-causes the
/// misclassification series. Untested connections are kept.
pub fn legcnet_mask(granger: Vec<GrangerResult>, spec: &LayerSpec) -> Result<PruneReport, PruningError> {
    let mut p_values = HashMap::with_capacity(granger.len());
    for g in &granger {
        if !g.connection.in_bounds(spec) {
            return Err(PruningError::OutOfBounds(g.connection));
        }
        if p_values.insert(g.connection, g.p_value).is_some() {
            return Err(PruningError::Duplicate(g.connection));
        }
    }
    let mut candidates: Vec<ConnectionId> = granger.iter().filter(|g| g.causal).map(|g| g.connection).collect();
    candidates.sort_unstable();
    Ok(build_report(spec, "legcnet", &candidates, |c| p_values[&c], granger))
}

fn check_count(spec: &LayerSpec, n_prune: usize) -> Result<(), PruningError> {
    let available = spec.n_connections();
    if n_prune > available {
        return Err(PruningError::TooMany {
            requested: n_prune,
            available,
        });
    }
    Ok(())
}

/// Uniformly random `n_prune` connections. Safety retention keeps the
/// connections drawn last.
pub fn random_mask(spec: &LayerSpec, n_prune: usize, seed: u64) -> Result<PruneReport, PruningError> {
    check_count(spec, n_prune)?;
    let mut all = all_connections(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(n_prune);
    let rank: HashMap<ConnectionId, usize> = all.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    all.sort_unstable();
    Ok(build_report(spec, "random", &all, |c| rank[&c] as f64, Vec::new()))
}

/// The `n_prune` smallest-magnitude weights, ties broken lexicographically.
/// Safety retention keeps the largest magnitudes among them.
pub fn magnitude_mask(spec: &LayerSpec, params: &DenseParams, n_prune: usize) -> Result<PruneReport, PruningError> {
    check_count(spec, n_prune)?;
    params.check(spec)?;
    let mut all = all_connections(spec);
    all.sort_by(|a, b| {
        params
            .weight(*a)
            .abs()
            .total_cmp(&params.weight(*b).abs())
            .then(a.cmp(b))
    });
    all.truncate(n_prune);
    all.sort_unstable();
    Ok(build_report(spec, "magnitude", &all, |c| params.weight(c).abs(), Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causality::GrangerFlag;
    use ndarray::array;

    fn result(c: ConnectionId, p: f64) -> GrangerResult {
        GrangerResult {
            connection: c,
            lag_used: 1,
            f_stat: 1.0,
            p_value: p,
            causal: p < 0.05,
            dof: (1, 5),
            flags: Vec::new(),
        }
    }

    #[test]
    fn table_connection_counts() {
        for (sizes, n) in [
            (vec![784, 50, 30, 10], 41000),
            (vec![9, 6, 1], 60),
            (vec![6, 8, 1], 56),
            (vec![4, 8, 1], 40),
            (vec![4, 6, 3], 42),
            (vec![3, 6, 3], 36),
        ] {
            let spec = LayerSpec::new(sizes).unwrap();
            assert_eq!(flops(&spec, &Mask::full(&spec)).unwrap(), n);
        }
        let spec = LayerSpec::new(vec![4, 6, 3]).unwrap();
        let mut m = Mask::full(&spec);
        m.set(ConnectionId::new(1, 1, 1), false);
        m.set(ConnectionId::new(2, 3, 6), false);
        assert_eq!(flops(&spec, &m).unwrap(), 40);
    }

    #[test]
    fn nothing_causal_prunes_nothing() {
        let spec = LayerSpec::new(vec![9, 6, 1]).unwrap();
        let g: Vec<_> = all_connections(&spec).into_iter().map(|c| result(c, 0.5)).collect();
        let r = legcnet_mask(g, &spec).unwrap();
        assert_eq!(r.n_pruned, 0);
        assert_eq!(r.mask, Mask::full(&spec));
    }

    #[test]
    fn six_causal_of_sixty_is_ten_percent() {
        let spec = LayerSpec::new(vec![9, 6, 1]).unwrap();
        let g: Vec<_> = all_connections(&spec)
            .into_iter()
            .enumerate()
            .map(|(i, c)| result(c, if i % 10 == 3 { 0.01 } else { 0.4 }))
            .collect();
        let r = legcnet_mask(g, &spec).unwrap();
        assert_eq!(r.n_pruned, 6);
        assert!((r.pruned_fraction - 0.10).abs() < 1e-12);
        assert_eq!(r.flops_sparse + r.n_pruned, r.flops_dense);
        assert!(!r.safety_triggered());
    }

    #[test]
    fn all_causal_triggers_safety() {
        let spec = LayerSpec::new(vec![2, 2, 1]).unwrap();
        let g: Vec<_> = all_connections(&spec)
            .into_iter()
            .enumerate()
            .map(|(i, c)| result(c, 0.001 * (i + 1) as f64))
            .collect();
        let r = legcnet_mask(g, &spec).unwrap();
        assert!(r.safety_triggered());
        // highest p in each layer survives: (1,2,2) and (2,1,2)
        assert_eq!(r.retained_for_safety, vec![ConnectionId::new(1, 2, 2), ConnectionId::new(2, 1, 2)]);
        assert_eq!(r.n_pruned, 4);
    }

    #[test]
    fn untested_connections_are_kept_and_duplicates_rejected() {
        let spec = LayerSpec::new(vec![2, 2, 1]).unwrap();
        let g = vec![result(ConnectionId::FIRST, 0.01)];
        let r = legcnet_mask(g, &spec).unwrap();
        assert_eq!(r.pruned, vec![ConnectionId::FIRST]);
        let dup = vec![result(ConnectionId::FIRST, 0.01), result(ConnectionId::FIRST, 0.2)];
        assert!(matches!(legcnet_mask(dup, &spec), Err(PruningError::Duplicate(_))));
        let mut flagged = GrangerResult::non_causal(ConnectionId::new(1, 2, 1), GrangerFlag::Unanalyzable);
        flagged.causal = false;
        assert_eq!(legcnet_mask(vec![flagged], &spec).unwrap().n_pruned, 0);
    }

    #[test]
    fn random_mask_properties() {
        let spec = LayerSpec::new(vec![4, 2, 1]).unwrap();
        assert_eq!(random_mask(&spec, 0, 1).unwrap().mask, Mask::full(&spec));
        let a = random_mask(&spec, 4, 7).unwrap();
        let b = random_mask(&spec, 4, 7).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.n_pruned, 4);
        let all = random_mask(&spec, 10, 7).unwrap();
        assert!(all.safety_triggered());
        assert!(all.n_pruned < 10);
        assert!(matches!(random_mask(&spec, 11, 7), Err(PruningError::TooMany { .. })));
    }

    #[test]
    fn magnitude_mask_examples() {
        let spec = LayerSpec::new(vec![3, 1]).unwrap();
        let params = DenseParams {
            weights: vec![array![[0.5, -0.1, 0.3]]],
            biases: vec![vec![0.0]],
        };
        let r = magnitude_mask(&spec, &params, 1).unwrap();
        assert_eq!(r.pruned, vec![ConnectionId::new(1, 1, 2)]);
        assert_eq!(magnitude_mask(&spec, &params, 0).unwrap().n_pruned, 0);

        let spec = LayerSpec::new(vec![2, 2, 1]).unwrap();
        let mut params = DenseParams::zeros(&spec);
        params.weights.iter_mut().for_each(|w| w.fill(0.7));
        let r = magnitude_mask(&spec, &params, 2).unwrap();
        assert_eq!(r.pruned, vec![ConnectionId::new(1, 1, 1), ConnectionId::new(1, 1, 2)]);
    }
}
