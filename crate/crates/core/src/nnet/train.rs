use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{gradients, loss};
use super::{evaluate, DenseParams, InitScheme, LayerSpec, Mask, NnetError};
use crate::data::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// An epoch "stalls" when the training loss improves by less than this.
    pub convergence_tol: f64,
    /// Consecutive stalled epochs before stopping.
    pub patience: usize,
    pub init: InitScheme,
    /// Offset added to the first weight for the perturbed replay.
    pub perturbation_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: 0.1,
            batch_size: 16,
            max_epochs: 500,
            convergence_tol: 1e-4,
            patience: 5,
            init: InitScheme::default(),
            perturbation_delta: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<(), NnetError> {
        let bad = |m: String| Err(NnetError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return bad(format!("batch_size {} must be in 1..={n_train}", self.batch_size));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return bad(format!("convergence_tol must be > 0, got {}", self.convergence_tol));
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if !self.perturbation_delta.is_finite() {
            return bad("perturbation_delta must be finite".into());
        }
        Ok(())
    }
}

/// Receives the parameters after initialization (iteration 0) and after every SGD step.
pub trait TrainObserver {
    fn on_iteration(&mut self, iteration: usize, params: &DenseParams);
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {
    fn on_iteration(&mut self, _: usize, _: &DenseParams) {}
}

impl<T: TrainObserver + ?Sized> TrainObserver for &mut T {
    fn on_iteration(&mut self, iteration: usize, params: &DenseParams) {
        (**self).on_iteration(iteration, params);
    }
}

impl<A: TrainObserver, B: TrainObserver> TrainObserver for (A, B) {
    fn on_iteration(&mut self, iteration: usize, params: &DenseParams) {
        self.0.on_iteration(iteration, params);
        self.1.on_iteration(iteration, params);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub final_params: DenseParams,
    pub epochs_run: usize,
    /// Number of SGD steps taken.
    pub iterations: usize,
    /// Full-training-set loss after each epoch.
    pub loss_history: Vec<f64>,
    pub accuracy: f64,
    pub f1: f64,
    pub per_class_f1: Vec<f64>,
}

const SHUFFLE_STREAM: u64 = 1;

/// Mini-batch SGD from `params0` with pruned weights held at exactly zero.
///
/// The batch order depends only on `cfg.seed`, so two runs with the same config see
/// the same schedule whatever their initial weights. Training stops after
/// `cfg.patience` consecutive epochs whose loss improvement is below
/// `cfg.convergence_tol`, or at `cfg.max_epochs`. Accuracy and F1 are measured on
/// `split.test`.
pub fn train(
    spec: &LayerSpec,
    params0: &DenseParams,
    mask: &Mask,
    split: &Split,
    cfg: &TrainConfig,
    mut observer: Option<&mut dyn TrainObserver>,
) -> Result<TrainResult, NnetError> {
    spec.validate()?;
    params0.check(spec)?;
    mask.check(spec)?;
    let train = &split.train;
    if train.n_features() != spec.inputs() {
        return Err(NnetError::Dimension(format!(
            "training data has {} features, network expects {}",
            train.n_features(),
            spec.inputs()
        )));
    }
    cfg.validate(train.n_samples())?;

    let mut params = params0.clone();
    params.apply_mask(mask);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let features = train.features.view();
    let labels = &train.labels;
    let mut order: Vec<usize> = (0..train.n_samples()).collect();
    let mut iteration = 0usize;
    if let Some(obs) = observer.as_mut() {
        obs.on_iteration(iteration, &params);
    }

    let mut prev_loss = loss(spec, &params, Some(mask), features, labels);
    let mut loss_history = Vec::new();
    let mut stalled = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let g = gradients(spec, &params, Some(mask), features, labels, batch);
            if !g.loss.is_finite() {
                return Err(NnetError::Divergence {
                    epoch: epoch + 1,
                    iteration,
                    loss: g.loss,
                });
            }
            for (w, gw) in params.weights.iter_mut().zip(&g.weights) {
                w.scaled_add(-cfg.learning_rate, gw);
            }
            for (b, gb) in params.biases.iter_mut().zip(&g.biases) {
                for (v, d) in b.iter_mut().zip(gb) {
                    *v -= cfg.learning_rate * d;
                }
            }
            params.apply_mask(mask);
            iteration += 1;
            if params.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
                return Err(NnetError::Divergence {
                    epoch: epoch + 1,
                    iteration,
                    loss: f64::NAN,
                });
            }
            if let Some(obs) = observer.as_mut() {
                obs.on_iteration(iteration, &params);
            }
        }
        epochs_run = epoch + 1;
        let epoch_loss = loss(spec, &params, Some(mask), features, labels);
        if !epoch_loss.is_finite() {
            return Err(NnetError::Divergence {
                epoch: epochs_run,
                iteration,
                loss: epoch_loss,
            });
        }
        loss_history.push(epoch_loss);
        if prev_loss - epoch_loss < cfg.convergence_tol {
            stalled += 1;
        } else {
            stalled = 0;
        }
        prev_loss = epoch_loss;
        if stalled >= cfg.patience {
            break;
        }
    }

    let eval = evaluate(spec, &params, mask, &split.test)?;
    Ok(TrainResult {
        final_params: params,
        epochs_run,
        iterations: iteration,
        loss_history,
        accuracy: eval.accuracy,
        f1: eval.f1,
        per_class_f1: eval.per_class_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::blobs;
    use crate::data::{split, NormalizationKind};
    use crate::nnet::init_params;
    use crate::trajectory::ConnectionId;

    fn blob_split(seed: u64) -> Split {
        let data = blobs(60, 2, 4, 1.0, 2.0, 2.0, seed).unwrap();
        split(&data, 0.25, seed, NormalizationKind::ZScore).unwrap()
    }

    #[test]
    fn masked_connection_stays_zero() {
        let spec = LayerSpec::new(vec![4, 2, 1]).unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let p0 = init_params(&spec, &cfg).unwrap();
        let mut mask = Mask::full(&spec);
        let c = ConnectionId::new(1, 1, 1);
        mask.set(c, false);

        struct Check(ConnectionId, usize);
        impl TrainObserver for Check {
            fn on_iteration(&mut self, _: usize, p: &DenseParams) {
                assert_eq!(p.weight(self.0), 0.0);
                self.1 += 1;
            }
        }
        let mut check = Check(c, 0);
        let res = train(&spec, &p0, &mask, &blob_split(1), &cfg, Some(&mut check)).unwrap();
        assert_eq!(res.final_params.weight(c), 0.0);
        assert_eq!(check.1, res.iterations + 1);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = LayerSpec::new(vec![4, 3, 1]).unwrap();
        let cfg = TrainConfig {
            seed: 4,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let p0 = init_params(&spec, &cfg).unwrap();
        let s = blob_split(2);
        let a = train(&spec, &p0, &Mask::full(&spec), &s, &cfg, None).unwrap();
        let b = train(&spec, &p0, &Mask::full(&spec), &s, &cfg, None).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn stops_after_patience_stalled_epochs() {
        let spec = LayerSpec::new(vec![4, 3, 1]).unwrap();
        let cfg = TrainConfig {
            convergence_tol: 10.0,
            patience: 3,
            ..TrainConfig::default()
        };
        let p0 = init_params(&spec, &cfg).unwrap();
        let res = train(&spec, &p0, &Mask::full(&spec), &blob_split(3), &cfg, None).unwrap();
        assert_eq!(res.epochs_run, 3);
        assert_eq!(res.loss_history.len(), 3);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = LayerSpec::new(vec![4, 3, 1]).unwrap();
        let cfg = TrainConfig::default();
        let p0 = init_params(&spec, &cfg).unwrap();
        let mut s = blob_split(3);
        s.train.features[(5, 1)] = f64::NAN;
        let err = train(&spec, &p0, &Mask::full(&spec), &s, &cfg, None).unwrap_err();
        assert!(matches!(err, NnetError::Divergence { .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::default();
        assert!(base.validate(100).is_ok());
        assert!(TrainConfig { batch_size: 101, ..base.clone() }.validate(100).is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..base.clone() }.validate(100).is_err());
        assert!(TrainConfig { convergence_tol: 0.0, ..base.clone() }.validate(100).is_err());
        assert!(TrainConfig { patience: 0, ..base }.validate(100).is_err());
    }
}
