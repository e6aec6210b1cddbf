use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{legcnet_mask, magnitude_mask, random_mask, PruneReport, PruneStrategy, PruningError};
use crate::causality::{granger_test, GrangerConfig, GrangerFlag, GrangerResult};
use crate::chaos::{ChaosError, LambdaSeries, LeEstimator, windowed_estimate};
use crate::data::Split;
use crate::nnet::{init_params, train, LayerSpec, Mask, TrainConfig, TrainResult};
use crate::trajectory::{
    diff, perturbed_replay, window, AccuracySeries, ConnectionId, MisclassificationSource, Replay, TrajectoryError,
    TrajectoryStore, Tracking,
};

/// Which per-connection series the exponents are estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSource {
    /// Baseline minus perturbed weight.
    #[default]
    Difference,
    /// The baseline weight itself.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub window_len: usize,
    pub estimator: LeEstimator,
    pub granger: GrangerConfig,
    pub tracking: Tracking,
    pub series_source: SeriesSource,
    pub misclassification: MisclassificationSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            window_len: 200,
            estimator: LeEstimator::default(),
            granger: GrangerConfig::default(),
            tracking: Tracking::All,
            series_source: SeriesSource::Difference,
            misclassification: MisclassificationSource::Train,
        }
    }
}

/// Exponent series and causality results for every tracked connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub lambdas: Vec<LambdaSeries>,
    pub granger: Vec<GrangerResult>,
    pub n_windows: usize,
}

#[derive(Debug, Clone)]
pub struct LegcnetRun {
    pub report: PruneReport,
    pub dense: TrainResult,
    pub sparse: TrainResult,
    /// Epoch budget of the recorded runs; `None` for the fully trained variant.
    pub probe_epochs: Option<usize>,
    pub replay: Replay,
    pub accuracy: AccuracySeries,
    pub lambdas: Vec<LambdaSeries>,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub report: PruneReport,
    pub sparse: TrainResult,
}

/// Default probe length: a tenth of the dense run, at least one epoch.
pub fn probe_epochs_for(dense_epochs: usize) -> usize {
    dense_epochs.div_ceil(10).max(1)
}

/// Windowed exponents of every tracked series and their Granger tests against
/// the per-window misclassification rate.
pub fn analyze(
    base: &TrajectoryStore,
    pert: &TrajectoryStore,
    accuracy: &AccuracySeries,
    cfg: &PipelineConfig,
) -> Result<Analysis, PruningError> {
    cfg.estimator.check_window(cfg.window_len)?;
    let w = cfg.window_len;
    let n = base.n_iterations().min(pert.n_iterations());
    let k = n / w;
    if k < cfg.granger.min_series_len {
        return Err(PruningError::ProbeTooShort {
            windows: k,
            window_len: w,
            needed: cfg.granger.min_series_len,
        });
    }
    if accuracy.len() != k {
        return Err(TrajectoryError::SnapshotMismatch {
            expected: k,
            found: accuracy.len(),
        }
        .into());
    }
    let target = accuracy.misclassification(cfg.misclassification);
    let series: Vec<(ConnectionId, Vec<f64>)> = match cfg.series_source {
        SeriesSource::Difference => diff(base, pert)?.into_iter().map(|d| (d.connection, d.values)).collect(),
        SeriesSource::Raw => base
            .connections()
            .iter()
            .map(|&c| (c, base.series(c).expect("tracked")[..n].to_vec()))
            .collect(),
    };
    let per_connection: Vec<(LambdaSeries, GrangerResult)> = series
        .par_iter()
        .map(|(c, values)| {
            let ws = window(*c, values, w)?;
            match windowed_estimate(&ws, &cfg.estimator) {
                Ok(ls) => {
                    let g = granger_test(*c, &ls.values, &target, &cfg.granger)?;
                    Ok((ls, g))
                }
                Err(ChaosError::Unanalyzable(_)) => Ok((
                    LambdaSeries {
                        connection: *c,
                        values: vec![0.0; k],
                        degenerate: vec![true; k],
                    },
                    GrangerResult::non_causal(*c, GrangerFlag::Unanalyzable),
                )),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<_, PruningError>>()?;
    let (lambdas, granger) = per_connection.into_iter().unzip();
    Ok(Analysis {
        lambdas,
        granger,
        n_windows: k,
    })
}

/// Record, replay, analyze, prune, and retrain from the same initialization.
///
/// For the probe variant the recorded runs stop after the probe budget, while
/// `dense_ref` (trained here when absent) is the converged comparison run.
pub fn run_legcnet(
    spec: &LayerSpec,
    split: &Split,
    cfg: &PipelineConfig,
    strategy: PruneStrategy,
    dense_ref: Option<&TrainResult>,
) -> Result<LegcnetRun, PruningError> {
    strategy.validate()?;
    let params0 = init_params(spec, &cfg.train)?;
    let w = Some(cfg.window_len);
    let (replay, dense, probe_epochs) = match strategy {
        PruneStrategy::LegcnetFt => {
            let replay = perturbed_replay(spec, &params0, split, &cfg.train, &cfg.tracking, w)?;
            let dense = replay.base_result.clone();
            (replay, dense, None)
        }
        PruneStrategy::LegcnetPt { probe_epochs } => {
            let dense = match dense_ref {
                Some(d) => d.clone(),
                None => train(spec, &params0, &Mask::full(spec), split, &cfg.train, None)?,
            };
            let epochs = probe_epochs.unwrap_or_else(|| probe_epochs_for(dense.epochs_run));
            let probe_cfg = TrainConfig {
                max_epochs: epochs,
                ..cfg.train.clone()
            };
            let replay = perturbed_replay(spec, &params0, split, &probe_cfg, &cfg.tracking, w)?;
            (replay, dense, Some(epochs))
        }
        other => {
            return Err(PruningError::InvalidStrategy(format!(
                "{} is a baseline; use run_baseline",
                other.name()
            )))
        }
    };
    let accuracy = replay.accuracy.clone().expect("window length was given");
    let analysis = analyze(&replay.base, &replay.pert, &accuracy, cfg)?;
    let mut report = legcnet_mask(analysis.granger, spec)?;
    report.strategy = strategy.name().to_string();
    log::info!(
        "{}: {} of {} connections pruned over {} windows",
        report.strategy,
        report.n_pruned,
        report.flops_dense,
        analysis.n_windows
    );
    let sparse = train(spec, &params0, &report.mask, split, &cfg.train, None)?;
    Ok(LegcnetRun {
        report,
        dense,
        sparse,
        probe_epochs,
        replay,
        accuracy,
        lambdas: analysis.lambdas,
    })
}

/// Random or magnitude pruning of `n_prune` connections, retrained from the
/// same initialization. Magnitudes come from the converged dense run.
pub fn run_baseline(
    spec: &LayerSpec,
    split: &Split,
    cfg: &PipelineConfig,
    strategy: PruneStrategy,
    n_prune: usize,
    dense: &TrainResult,
) -> Result<BaselineRun, PruningError> {
    let report = match strategy {
        PruneStrategy::Random { seed } => random_mask(spec, n_prune, seed)?,
        PruneStrategy::Magnitude => magnitude_mask(spec, &dense.final_params, n_prune)?,
        other => {
            return Err(PruningError::InvalidStrategy(format!(
                "{} is not a baseline; use run_legcnet",
                other.name()
            )))
        }
    };
    let params0 = init_params(spec, &cfg.train)?;
    let sparse = train(spec, &params0, &report.mask, split, &cfg.train, None)?;
    Ok(BaselineRun { report, sparse })
}
