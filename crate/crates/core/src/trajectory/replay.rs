use super::window::{AccuracySeries, DiffSeries, WindowSnapshots};
use super::{diff, ConnectionId, TrajectoryError, TrajectoryStore, Tracking};
use crate::data::Split;
use crate::nnet::{train, DenseParams, LayerSpec, Mask, TrainConfig, TrainResult};

/// Baseline and perturbed runs over a common iteration count.
#[derive(Debug, Clone)]
pub struct Replay {
    pub base: TrajectoryStore,
    pub pert: TrajectoryStore,
    pub base_result: TrainResult,
    pub pert_result: TrainResult,
    /// Per-window accuracy of the baseline run, when a window length was given.
    pub accuracy: Option<AccuracySeries>,
}

/// Train from `params0` and again from `params0` with the first weight shifted
/// by `cfg.perturbation_delta`, recording the tracked connections in both runs.
///
/// The perturbed run gets the same seed and schedule and is capped at the
/// baseline's epoch count; both stores are then cut to the shorter length.
pub fn perturbed_replay(
    spec: &LayerSpec,
    params0: &DenseParams,
    split: &Split,
    cfg: &TrainConfig,
    tracking: &Tracking,
    window_len: Option<usize>,
) -> Result<Replay, TrajectoryError> {
    if cfg.perturbation_delta == 0.0 {
        log::warn!("perturbation_delta is 0; difference series will be identically zero");
    }
    let mask = Mask::full(spec);
    let mut base = TrajectoryStore::for_spec("base", spec, tracking)?;
    let (base_result, accuracy) = match window_len {
        Some(w) => {
            let mut snaps = WindowSnapshots::new(spec, &mask, split, w)?;
            let res = {
                let mut obs = (&mut base, &mut snaps);
                train(spec, params0, &mask, split, cfg, Some(&mut obs))?
            };
            (res, Some(snaps.finish()?))
        }
        None => (train(spec, params0, &mask, split, cfg, Some(&mut base))?, None),
    };

    let mut p1 = params0.clone();
    *p1.weight_mut(ConnectionId::FIRST) += cfg.perturbation_delta;
    let pert_cfg = TrainConfig {
        max_epochs: base_result.epochs_run,
        ..cfg.clone()
    };
    let mut pert = TrajectoryStore::for_spec("pert", spec, tracking)?;
    let pert_result = train(spec, &p1, &mask, split, &pert_cfg, Some(&mut pert))?;

    let n = base.n_iterations().min(pert.n_iterations());
    base.truncate(n);
    pert.truncate(n);
    let accuracy = accuracy.map(|mut a| {
        a.truncate(n / window_len.expect("accuracy implies a window length"));
        a
    });
    Ok(Replay {
        base,
        pert,
        base_result,
        pert_result,
        accuracy,
    })
}

/// Slow validation mode: perturb each listed connection on its own and return
/// that connection's difference series from its own replay.
pub fn per_weight_replay(
    spec: &LayerSpec,
    params0: &DenseParams,
    split: &Split,
    cfg: &TrainConfig,
    connections: &[ConnectionId],
) -> Result<Vec<DiffSeries>, TrajectoryError> {
    if let Some(bad) = connections.iter().find(|c| !c.in_bounds(spec)) {
        return Err(TrajectoryError::OutOfBounds(*bad));
    }
    let mask = Mask::full(spec);
    let mut base = TrajectoryStore::new("base", connections.to_vec());
    let base_result = train(spec, params0, &mask, split, cfg, Some(&mut base))?;
    let pert_cfg = TrainConfig {
        max_epochs: base_result.epochs_run,
        ..cfg.clone()
    };
    let mut out = Vec::with_capacity(connections.len());
    for &c in connections {
        let mut p1 = params0.clone();
        *p1.weight_mut(c) += cfg.perturbation_delta;
        let mut pert = TrajectoryStore::new("pert", vec![c]);
        train(spec, &p1, &mask, split, &pert_cfg, Some(&mut pert))?;
        let single = TrajectoryStore::from_columns("base".into(), vec![c], vec![base.series(c).expect("tracked").to_vec()]);
        out.extend(diff(&single, &pert)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::blobs;
    use crate::data::{split, NormalizationKind};
    use crate::nnet::init_params;

    fn setup() -> (LayerSpec, DenseParams, Split, TrainConfig) {
        let spec = LayerSpec::new(vec![4, 3, 1]).unwrap();
        let cfg = TrainConfig {
            seed: 9,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        let data = blobs(40, 2, 4, 1.0, 2.0, 1.0, 5).unwrap();
        let s = split(&data, 0.25, 5, NormalizationKind::ZScore).unwrap();
        let p0 = init_params(&spec, &cfg).unwrap();
        (spec, p0, s, cfg)
    }

    #[test]
    fn zero_delta_gives_identical_stores() {
        let (spec, p0, s, cfg) = setup();
        let cfg = TrainConfig {
            perturbation_delta: 0.0,
            ..cfg
        };
        let r = perturbed_replay(&spec, &p0, &s, &cfg, &Tracking::All, None).unwrap();
        assert_eq!(r.base.columns(), r.pert.columns());
        assert!(diff(&r.base, &r.pert).unwrap().iter().all(|d| d.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn first_weight_differs_by_delta_at_start() {
        let (spec, p0, s, cfg) = setup();
        let r = perturbed_replay(&spec, &p0, &s, &cfg, &Tracking::All, Some(10)).unwrap();
        let d = diff(&r.base, &r.pert).unwrap();
        let first = d.iter().find(|d| d.connection == ConnectionId::FIRST).unwrap();
        let expect = p0.weight(ConnectionId::FIRST) - (p0.weight(ConnectionId::FIRST) + 1e-6);
        assert_eq!(first.values[0], expect);
        assert!((first.values[0] + 1e-6).abs() < 1e-15);
        assert!(d.iter().filter(|d| d.connection != ConnectionId::FIRST).all(|d| d.values[0] == 0.0));
        let acc = r.accuracy.unwrap();
        assert_eq!(acc.len(), r.base.n_iterations() / 10);
    }

    #[test]
    fn per_weight_mode_matches_single_replay_for_first_weight() {
        let (spec, p0, s, cfg) = setup();
        let r = perturbed_replay(&spec, &p0, &s, &cfg, &Tracking::All, None).unwrap();
        let single = diff(&r.base, &r.pert).unwrap();
        let per = per_weight_replay(&spec, &p0, &s, &cfg, &[ConnectionId::FIRST]).unwrap();
        assert_eq!(per[0].values, single[0].values);
    }
}
