//! Stage helpers shared by `run`, `analyze` and `diagnose`: artifact encoders
//! and the post-training diagnostics of one model.

use std::fs;
use std::path::Path;

use legcnet::chaos::write_lambda_csv;
use legcnet::causality::write_granger_csv;
use legcnet::diagnostics::{consistency, epsilon_closeness, network_esd, network_shap, EsdReport};
use legcnet::nnet::{read_mask, read_params, write_mask, write_params, DenseParams, LayerSpec, Mask};
use legcnet::pruning::{analyze, legcnet_mask, PipelineConfig, PruneReport};
use legcnet::trajectory::{read_store, AccuracySeries, ConnectionId};
use ndarray::Array2;

use crate::config::DiagnosticsConfig;
use crate::report::LayerEsd;
use crate::{write_atomic, CliError};

pub const PARAMS_FILE: &str = "params.bin";
pub const MASK_FILE: &str = "mask.bin";
pub const BASE_TRAJECTORY: &str = "base.lgct";
pub const PERT_TRAJECTORY: &str = "pert.lgct";
pub const ACCURACY_FILE: &str = "accuracy.csv";

pub fn save_params(dir: &Path, name: &str, p: &DenseParams) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_params(&mut buf, p)?;
    write_atomic(dir.join(name), &buf)
}

pub fn save_mask(dir: &Path, m: &Mask) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_mask(&mut buf, m)?;
    write_atomic(dir.join(MASK_FILE), &buf)
}

pub fn load_params(path: &Path) -> Result<DenseParams, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_params(std::io::BufReader::new(f))?)
}

pub fn load_mask(path: &Path) -> Result<Mask, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_mask(std::io::BufReader::new(f))?)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

pub fn loss_csv(history: &[f64]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    finish(w)
}

pub fn accuracy_csv(acc: &AccuracySeries) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window_index", "train_accuracy", "test_accuracy"])?;
    for (k, (a, b)) in acc.train.iter().zip(&acc.test).enumerate() {
        w.write_record([k.to_string(), a.to_string(), b.to_string()])?;
    }
    finish(w)
}

pub fn read_accuracy_csv(path: &Path) -> Result<AccuracySeries, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut acc = AccuracySeries::default();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Config(format!("{}: malformed row {rec:?}", path.display())))
        };
        acc.train.push(get(1)?);
        acc.test.push(get(2)?);
    }
    Ok(acc)
}

pub fn connections_csv(conns: &[ConnectionId]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "to", "from"])?;
    for c in conns {
        w.write_record([c.layer.to_string(), c.to.to_string(), c.from.to_string()])?;
    }
    finish(w)
}

pub fn esd_csv(reports: &[EsdReport]) -> Result<(Vec<u8>, Vec<u8>), CliError> {
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record([
        "layer",
        "alpha",
        "alpha_w",
        "lambda_max",
        "xmin",
        "ks_distance",
        "n_tail",
        "low_tail",
        "out_of_band",
        "correlation_trap",
    ])?;
    let mut eig = csv::Writer::from_writer(Vec::new());
    eig.write_record(["layer", "index", "eigenvalue"])?;
    for r in reports {
        summary.write_record([
            r.layer.to_string(),
            r.alpha.to_string(),
            r.alpha_w.to_string(),
            r.lambda_max.to_string(),
            r.xmin.to_string(),
            r.ks_distance.to_string(),
            r.n_tail.to_string(),
            r.low_tail.to_string(),
            r.out_of_band.to_string(),
            r.correlation_trap.to_string(),
        ])?;
        for (i, l) in r.eigenvalues.iter().enumerate() {
            eig.write_record([r.layer.to_string(), i.to_string(), l.to_string()])?;
        }
    }
    Ok((finish(summary)?, finish(eig)?))
}

pub fn shap_csv(importance: &[f64]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "mean_abs_shap"])?;
    for (i, v) in importance.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    finish(w)
}

/// Background and explained rows for SHAP, shared by every model of a run.
#[derive(Debug, Clone)]
pub struct ShapData {
    pub background: Array2<f64>,
    pub samples: Array2<f64>,
}

/// The dense model of the same seed, for the comparison metrics.
pub struct DenseRef<'a> {
    pub params: &'a DenseParams,
    pub importance: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Default)]
pub struct ModelDiagnostics {
    pub esd: Vec<LayerEsd>,
    pub shap_importance: Option<Vec<f64>>,
    pub shap_consistency: Option<legcnet::diagnostics::ConsistencyScore>,
    pub epsilon_retrained: Option<f64>,
    pub epsilon_masked: Option<f64>,
}

/// ESD, SHAP, and closeness to the dense model, writing `esd.csv`,
/// `eigenvalues.csv` and `shap.csv` into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn diagnose_model(
    dir: &Path,
    cfg: &DiagnosticsConfig,
    spec: &LayerSpec,
    params: &DenseParams,
    mask: &Mask,
    shap: Option<&ShapData>,
    dense: Option<DenseRef<'_>>,
    eval_inputs: &Array2<f64>,
    seed: u64,
) -> Result<ModelDiagnostics, CliError> {
    let mut out = ModelDiagnostics::default();
    if cfg.esd {
        let reports = network_esd(params, seed)?;
        let (summary, eig) = esd_csv(&reports)?;
        write_atomic(dir.join("esd.csv"), &summary)?;
        write_atomic(dir.join("eigenvalues.csv"), &eig)?;
        out.esd = reports
            .iter()
            .map(|r| {
                let (rows, cols) = spec.weight_shape(r.layer - 1);
                LayerEsd::from_report(r, cols, rows)
            })
            .collect();
    }
    if let (true, Some(data)) = (cfg.shap, shap) {
        let opts = legcnet::diagnostics::ShapOptions {
            seed,
            ..cfg.shap_options.clone()
        };
        let rep = network_shap(spec, params, mask, &data.background, &data.samples, &opts)?;
        write_atomic(dir.join("shap.csv"), &shap_csv(&rep.importance)?)?;
        if let Some(d) = dense.as_ref().and_then(|d| d.importance) {
            out.shap_consistency = Some(consistency(d, &rep.importance)?);
        }
        out.shap_importance = Some(rep.importance);
    }
    if let (true, Some(d)) = (cfg.closeness, dense.as_ref()) {
        let full = Mask::full(spec);
        out.epsilon_retrained = Some(epsilon_closeness(spec, (d.params, &full), (params, mask), eval_inputs)?);
        out.epsilon_masked = Some(epsilon_closeness(spec, (d.params, &full), (d.params, mask), eval_inputs)?);
    }
    Ok(out)
}

/// Recompute exponents, Granger tests and the prune set from the stored
/// trajectories of one cell, writing them under `<cell>/analysis/`.
pub fn reanalyze_cell(cell: &Path, spec: &LayerSpec, cfg: &PipelineConfig) -> Result<PruneReport, CliError> {
    let open = |name: &str| -> Result<std::io::BufReader<fs::File>, CliError> {
        let p = cell.join(name);
        let f = fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(std::io::BufReader::new(f))
    };
    let base = read_store(open(BASE_TRAJECTORY)?, "base")?;
    let pert = read_store(open(PERT_TRAJECTORY)?, "pert")?;
    let acc = read_accuracy_csv(&cell.join(ACCURACY_FILE))?;
    let analysis = analyze(&base, &pert, &acc, cfg)?;
    let out = cell.join("analysis");
    let mut buf = Vec::new();
    write_lambda_csv(&mut buf, &analysis.lambdas)?;
    write_atomic(out.join("lambda.csv"), &buf)?;
    let mut buf = Vec::new();
    write_granger_csv(&mut buf, &analysis.granger)?;
    write_atomic(out.join("granger.csv"), &buf)?;
    let report = legcnet_mask(analysis.granger, spec)?;
    write_atomic(out.join("pruned.csv"), &connections_csv(&report.pruned)?)?;
    Ok(report)
}
