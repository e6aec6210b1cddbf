//! End-to-end execution of a config.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use legcnet::chaos::write_lambda_csv;
use legcnet::causality::write_granger_csv;
use legcnet::data::{split, stratified_subsample, Split};
use legcnet::diagnostics::shap_background;
use legcnet::nnet::{init_params, train, LayerSpec, Mask, TrainResult};
use legcnet::pruning::{run_baseline, run_legcnet, PipelineConfig, PruneReport, PruneStrategy};
use legcnet::trajectory::write_store;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, LoadedConfig, StrategyName};
use crate::report::{cells_csv, report_table, CellMetrics, CellOutcome, CellReport, DatasetSummary, RunReport, TableId, REPORT_FILE};
use crate::stages::{
    accuracy_csv, connections_csv, diagnose_model, load_mask, load_params, loss_csv, reanalyze_cell, save_mask,
    save_params, DenseRef, ModelDiagnostics, ShapData, ACCURACY_FILE, BASE_TRAJECTORY, MASK_FILE, PARAMS_FILE,
    PERT_TRAJECTORY,
};
use crate::{write_atomic, CliError};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub dir: PathBuf,
}

#[derive(Serialize)]
struct CellTiming {
    seed: u64,
    strategy: StrategyName,
    seconds: f64,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    spec: LayerSpec,
    split: Split,
    shap: Option<ShapData>,
    dir: PathBuf,
}

struct DenseState {
    result: TrainResult,
    importance: Option<Vec<f64>>,
}

/// Run `f`, turning both errors and panics into a message.
fn guarded<T>(f: impl FnOnce() -> Result<T, CliError>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r.map_err(|e| e.to_string()),
        Err(p) => Err(match p.downcast_ref::<&str>() {
            Some(s) => format!("panic: {s}"),
            None => match p.downcast_ref::<String>() {
                Some(s) => format!("panic: {s}"),
                None => "panic".into(),
            },
        }),
    }
}

fn metrics(report: Option<&PruneReport>, flops: usize, sparse: &TrainResult, diag: ModelDiagnostics) -> CellMetrics {
    CellMetrics {
        flops_dense: report.map_or(flops, |r| r.flops_dense),
        flops_sparse: report.map_or(flops, |r| r.flops_sparse),
        n_pruned: report.map_or(0, |r| r.n_pruned),
        pruned_fraction: report.map_or(0.0, |r| r.pruned_fraction),
        retained_for_safety: report.map_or(0, |r| r.retained_for_safety.len()),
        epochs: sparse.epochs_run,
        iterations: sparse.iterations,
        accuracy: sparse.accuracy,
        f1: sparse.f1,
        probe_epochs: None,
        n_windows: None,
        esd: diag.esd,
        shap_importance: diag.shap_importance,
        shap_consistency: diag.shap_consistency,
        epsilon_retrained: diag.epsilon_retrained,
        epsilon_masked: diag.epsilon_masked,
    }
}

fn seed_cfg(cfg: &ExperimentConfig, seed: u64) -> PipelineConfig {
    let mut p = cfg.pipeline.clone();
    p.train.seed = seed;
    p
}

fn dense_cell(ctx: &Context, pipe: &PipelineConfig, dir: &Path, seed: u64) -> Result<(DenseState, CellMetrics), CliError> {
    let full = Mask::full(&ctx.spec);
    let params0 = init_params(&ctx.spec, &pipe.train)?;
    let result = train(&ctx.spec, &params0, &full, &ctx.split, &pipe.train, None)?;
    save_params(dir, "init.bin", &params0)?;
    save_params(dir, PARAMS_FILE, &result.final_params)?;
    write_atomic(dir.join("loss.csv"), &loss_csv(&result.loss_history)?)?;
    let diag = diagnose_model(
        dir,
        &ctx.cfg.diagnostics,
        &ctx.spec,
        &result.final_params,
        &full,
        ctx.shap.as_ref(),
        None,
        &ctx.split.test.features,
        seed,
    )?;
    let importance = diag.shap_importance.clone();
    let m = metrics(None, ctx.spec.n_connections(), &result, diag);
    Ok((DenseState { result, importance }, m))
}

fn write_prune_artifacts(dir: &Path, report: &PruneReport, sparse: &TrainResult) -> Result<(), CliError> {
    save_params(dir, PARAMS_FILE, &sparse.final_params)?;
    save_mask(dir, &report.mask)?;
    write_atomic(dir.join("pruned.csv"), &connections_csv(&report.pruned)?)?;
    write_atomic(dir.join("retained.csv"), &connections_csv(&report.retained_for_safety)?)?;
    write_atomic(dir.join("loss.csv"), &loss_csv(&sparse.loss_history)?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pruned_cell(
    ctx: &Context,
    pipe: &PipelineConfig,
    strategy: StrategyName,
    dense: &DenseState,
    counts: &BTreeMap<StrategyName, usize>,
    dir: &Path,
    seed: u64,
) -> Result<CellMetrics, CliError> {
    let (report, sparse, probe, windows) = match strategy {
        StrategyName::LegcnetFt | StrategyName::LegcnetPt => {
            let strat = if strategy == StrategyName::LegcnetFt {
                PruneStrategy::LegcnetFt
            } else {
                PruneStrategy::LegcnetPt {
                    probe_epochs: ctx.cfg.probe_epochs,
                }
            };
            let probe_pipe;
            let pipe = match (strategy, ctx.cfg.probe_window_len) {
                (StrategyName::LegcnetPt, Some(w)) => {
                    probe_pipe = PipelineConfig { window_len: w, ..pipe.clone() };
                    &probe_pipe
                }
                _ => pipe,
            };
            let run = run_legcnet(&ctx.spec, &ctx.split, pipe, strat, Some(&dense.result))?;
            let mut buf = Vec::new();
            write_granger_csv(&mut buf, &run.report.granger)?;
            write_atomic(dir.join("granger.csv"), &buf)?;
            let mut buf = Vec::new();
            write_lambda_csv(&mut buf, &run.lambdas)?;
            write_atomic(dir.join("lambda.csv"), &buf)?;
            write_atomic(dir.join(ACCURACY_FILE), &accuracy_csv(&run.accuracy)?)?;
            if ctx.cfg.output.trajectories {
                for (name, store) in [(BASE_TRAJECTORY, &run.replay.base), (PERT_TRAJECTORY, &run.replay.pert)] {
                    let mut buf = Vec::new();
                    write_store(&mut buf, store)?;
                    write_atomic(dir.join(name), &buf)?;
                }
            }
            (run.report, run.sparse, run.probe_epochs, Some(run.accuracy.len()))
        }
        StrategyName::Random | StrategyName::Magnitude => {
            let n = counts
                .get(&StrategyName::LegcnetFt)
                .or_else(|| counts.get(&StrategyName::LegcnetPt))
                .copied()
                .ok_or_else(|| CliError::Config(format!("no successful LEGCNet cell for seed {seed} to match")))?;
            let strat = if strategy == StrategyName::Random {
                PruneStrategy::Random { seed }
            } else {
                PruneStrategy::Magnitude
            };
            let b = run_baseline(&ctx.spec, &ctx.split, pipe, strat, n, &dense.result)?;
            (b.report, b.sparse, None, None)
        }
        StrategyName::Dense => unreachable!("dense cells are handled separately"),
    };
    write_prune_artifacts(dir, &report, &sparse)?;
    let diag = diagnose_model(
        dir,
        &ctx.cfg.diagnostics,
        &ctx.spec,
        &sparse.final_params,
        &report.mask,
        ctx.shap.as_ref(),
        Some(DenseRef {
            params: &dense.result.final_params,
            importance: dense.importance.as_deref(),
        }),
        &ctx.split.test.features,
        seed,
    )?;
    let mut m = metrics(Some(&report), report.flops_dense, &sparse, diag);
    m.probe_epochs = probe;
    m.n_windows = windows;
    Ok(m)
}

fn run_seed(ctx: &Context, seed: u64) -> Vec<(CellReport, f64)> {
    let pipe = seed_cfg(ctx.cfg, seed);
    let seed_dir = ctx.dir.join(format!("seed-{seed}"));
    let mut out = Vec::new();
    let t = Instant::now();
    let dense = guarded(|| dense_cell(ctx, &pipe, &seed_dir.join("dense"), seed));
    let (state, outcome) = match dense {
        Ok((s, m)) => (Some(s), CellOutcome::Ok(m)),
        Err(error) => {
            log::error!("seed {seed} dense: {error}");
            (None, CellOutcome::Failed { error })
        }
    };
    let dense_error = match &outcome {
        CellOutcome::Failed { error } => Some(error.clone()),
        CellOutcome::Ok(_) => None,
    };
    let cell = |strategy, outcome| CellReport { seed, strategy, outcome };
    out.push((cell(StrategyName::Dense, outcome), t.elapsed().as_secs_f64()));

    let mut counts = BTreeMap::new();
    for &strategy in ctx.cfg.strategies.iter().filter(|s| **s != StrategyName::Dense) {
        let t = Instant::now();
        let result = match (&state, &dense_error) {
            (Some(d), _) => guarded(|| {
                pruned_cell(ctx, &pipe, strategy, d, &counts, &seed_dir.join(strategy.as_str()), seed)
            }),
            (None, e) => Err(format!("dense run failed: {}", e.as_deref().unwrap_or("unknown"))),
        };
        let outcome = match result {
            Ok(m) => {
                log::info!("seed {seed} {}: pruned {} of {}", strategy.as_str(), m.n_pruned, m.flops_dense);
                if matches!(strategy, StrategyName::LegcnetFt | StrategyName::LegcnetPt) {
                    counts.insert(strategy, m.n_pruned);
                }
                CellOutcome::Ok(m)
            }
            Err(error) => {
                log::error!("seed {seed} {}: {error}", strategy.as_str());
                CellOutcome::Failed { error }
            }
        };
        out.push((cell(strategy, outcome), t.elapsed().as_secs_f64()));
    }
    out
}

fn prepare(loaded: &LoadedConfig, dir: PathBuf) -> Result<(Context<'_>, DatasetSummary), CliError> {
    let cfg = &loaded.config;
    let (data, dropped) = loaded.load_dataset()?;
    let s = split(&data, cfg.dataset.test_fraction, cfg.dataset.split_seed, cfg.dataset.normalization)?;
    let spec = LayerSpec::for_classes(data.n_features(), &cfg.hidden, data.n_classes)?;
    let shap = cfg.diagnostics.shap.then(|| {
        let idx = stratified_subsample(&s.test, cfg.diagnostics.shap_samples.min(s.test.n_samples()), cfg.dataset.split_seed);
        ShapData {
            background: shap_background(&s.train, cfg.diagnostics.shap_background, cfg.dataset.split_seed),
            samples: s.test.subset(&idx).features,
        }
    });
    let summary = DatasetSummary {
        n_train: s.train.n_samples(),
        n_test: s.test.n_samples(),
        n_features: data.n_features(),
        n_classes: data.n_classes,
        dropped_rows: dropped,
    };
    Ok((
        Context {
            cfg,
            spec,
            split: s,
            shap,
            dir,
        },
        summary,
    ))
}

/// Execute every (seed, strategy) cell and write the run directory.
///
/// Seeds run in parallel. Within a seed the dense model is trained first, the
/// LEGCNet variants next, and the baselines last, pruning as many connections
/// as legcnet-ft (or legcnet-pt when ft is not configured). A failing cell is
/// recorded and its siblings continue.
pub fn run(loaded: &LoadedConfig, out: Option<&Path>) -> Result<RunOutcome, CliError> {
    let cfg = &loaded.config;
    let dir = loaded.run_dir(out)?;
    let hash = loaded.hash()?;
    let (ctx, summary) = prepare(loaded, dir.clone())?;
    log::info!("run directory {}", dir.display());
    write_atomic(dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;

    let per_seed: Vec<Vec<(CellReport, f64)>> = cfg.seeds.par_iter().map(|&s| run_seed(&ctx, s)).collect();
    let mut cells = Vec::new();
    let mut timing = Vec::new();
    for (c, secs) in per_seed.into_iter().flatten() {
        timing.push(CellTiming {
            seed: c.seed,
            strategy: c.strategy,
            seconds: secs,
        });
        cells.push(c);
    }
    let report = RunReport {
        name: cfg.name.clone(),
        label: cfg.label(),
        config_hash: hash,
        architecture: ctx.spec.sizes.clone(),
        dataset: Some(summary),
        seeds: cfg.seeds.clone(),
        strategies: cfg.strategies.clone(),
        cells,
    };
    write_atomic(dir.join(REPORT_FILE), &serde_json::to_vec_pretty(&report)?)?;
    write_atomic(dir.join("cells.csv"), &cells_csv(&report)?)?;
    for t in TableId::ALL {
        match report_table(&report, t) {
            Ok(bytes) => write_atomic(dir.join(t.file_name()), &bytes)?,
            Err(CliError::MissingRows(rows)) => {
                log::info!("{:?} not written: {} rows missing", t, rows.len());
            }
            Err(e) => return Err(e),
        }
    }
    write_atomic(dir.join("timing.json"), &serde_json::to_vec_pretty(&timing)?)?;
    Ok(RunOutcome { report, dir })
}

/// Rerun exponents and Granger tests on every stored trajectory pair of an
/// existing run. Returns the analysed cell directories and their prune sets.
pub fn analyze_run(loaded: &LoadedConfig, out: Option<&Path>) -> Result<Vec<(PathBuf, PruneReport)>, CliError> {
    let dir = loaded.run_dir(out)?;
    let report = RunReport::load(&dir)?;
    let spec = LayerSpec::new(report.architecture.clone())?;
    let mut done = Vec::new();
    for &seed in &report.seeds {
        for s in [StrategyName::LegcnetFt, StrategyName::LegcnetPt] {
            let cell = dir.join(format!("seed-{seed}")).join(s.as_str());
            if !cell.join(BASE_TRAJECTORY).exists() {
                continue;
            }
            let mut pipe = seed_cfg(&loaded.config, seed);
            if let (StrategyName::LegcnetPt, Some(w)) = (s, loaded.config.probe_window_len) {
                pipe.window_len = w;
            }
            let pr = reanalyze_cell(&cell, &spec, &pipe)?;
            done.push((cell, pr));
        }
    }
    Ok(done)
}

/// Recompute ESD, SHAP and closeness for every stored checkpoint of an
/// existing run, writing them under `<cell>/diagnostics/`.
pub fn diagnose_run(loaded: &LoadedConfig, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let dir = loaded.run_dir(out)?;
    let report = RunReport::load(&dir)?;
    let (ctx, _) = prepare(loaded, dir.clone())?;
    if ctx.spec.sizes != report.architecture {
        return Err(CliError::Config("dataset no longer matches the stored architecture".into()));
    }
    let mut done = Vec::new();
    for &seed in &report.seeds {
        let seed_dir = dir.join(format!("seed-{seed}"));
        let dense_path = seed_dir.join("dense").join(PARAMS_FILE);
        if !dense_path.exists() {
            continue;
        }
        let dense = load_params(&dense_path)?;
        let mut dense_importance: Option<Vec<f64>> = None;
        for &s in &report.strategies {
            let cell = seed_dir.join(s.as_str());
            if !cell.join(PARAMS_FILE).exists() {
                continue;
            }
            let params = load_params(&cell.join(PARAMS_FILE))?;
            let mask = if cell.join(MASK_FILE).exists() {
                load_mask(&cell.join(MASK_FILE))?
            } else {
                Mask::full(&ctx.spec)
            };
            let dense_ref = (s != StrategyName::Dense).then_some(DenseRef {
                params: &dense,
                importance: dense_importance.as_deref(),
            });
            let d = diagnose_model(
                &cell.join("diagnostics"),
                &ctx.cfg.diagnostics,
                &ctx.spec,
                &params,
                &mask,
                ctx.shap.as_ref(),
                dense_ref,
                &ctx.split.test.features,
                seed,
            )?;
            if s == StrategyName::Dense {
                dense_importance = d.shap_importance;
            }
            done.push(cell);
        }
    }
    Ok(done)
}
