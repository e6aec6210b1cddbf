//! Run reports and the table layouts built from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use legcnet::diagnostics::{ConsistencyScore, EsdReport};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, StrategyName};
use crate::CliError;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum TableId {
    T1,
    T2,
    T3,
    T4,
}

impl TableId {
    pub const ALL: [TableId; 4] = [TableId::T1, TableId::T2, TableId::T3, TableId::T4];

    pub fn file_name(&self) -> &'static str {
        match self {
            TableId::T1 => "T1.csv",
            TableId::T2 => "T2.csv",
            TableId::T3 => "T3.csv",
            TableId::T4 => "T4.csv",
        }
    }

    fn required(&self) -> &'static [StrategyName] {
        match self {
            TableId::T1 => &[StrategyName::Dense, StrategyName::LegcnetFt],
            TableId::T2 => &[StrategyName::LegcnetFt, StrategyName::LegcnetPt],
            TableId::T3 => &[StrategyName::Random, StrategyName::Magnitude],
            TableId::T4 => &[StrategyName::Dense],
        }
    }
}

/// Spectral summary of one weight layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEsd {
    pub layer: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub alpha: f64,
    pub alpha_w: f64,
    pub lambda_max: f64,
    pub xmin: f64,
    pub ks_distance: f64,
    pub n_tail: usize,
    pub low_tail: bool,
    pub out_of_band: bool,
    pub correlation_trap: bool,
}

impl LayerEsd {
    pub fn from_report(r: &EsdReport, fan_in: usize, fan_out: usize) -> Self {
        Self {
            layer: r.layer,
            fan_in,
            fan_out,
            alpha: r.alpha,
            alpha_w: r.alpha_w,
            lambda_max: r.lambda_max,
            xmin: r.xmin,
            ks_distance: r.ks_distance,
            n_tail: r.n_tail,
            low_tail: r.low_tail,
            out_of_band: r.out_of_band,
            correlation_trap: r.correlation_trap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub flops_dense: usize,
    pub flops_sparse: usize,
    pub n_pruned: usize,
    pub pruned_fraction: f64,
    /// Connections kept only by the per-neuron / per-layer safety rule.
    pub retained_for_safety: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub accuracy: f64,
    pub f1: f64,
    /// Recorded epochs for legcnet-pt.
    pub probe_epochs: Option<usize>,
    pub n_windows: Option<usize>,
    pub esd: Vec<LayerEsd>,
    pub shap_importance: Option<Vec<f64>>,
    /// Importance agreement with the dense model of the same seed.
    pub shap_consistency: Option<ConsistencyScore>,
    /// Output gap to the dense model after retraining.
    pub epsilon_retrained: Option<f64>,
    /// Output gap of the dense weights under the mask, before retraining.
    pub epsilon_masked: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok(CellMetrics),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub seed: u64,
    pub strategy: StrategyName,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl CellReport {
    pub fn metrics(&self) -> Option<&CellMetrics> {
        match &self.outcome {
            CellOutcome::Ok(m) => Some(m),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub label: String,
    pub config_hash: String,
    pub architecture: Vec<usize>,
    pub dataset: Option<DatasetSummary>,
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategyName>,
    /// Sorted by seed, then strategy.
    pub cells: Vec<CellReport>,
}

impl RunReport {
    /// A report with no cells, used when a run directory has no report yet.
    pub fn empty(cfg: &ExperimentConfig, config_hash: String) -> Self {
        Self {
            name: cfg.name.clone(),
            label: cfg.label(),
            config_hash,
            architecture: Vec::new(),
            dataset: None,
            seeds: cfg.seeds.clone(),
            strategies: cfg.strategies.clone(),
            cells: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(REPORT_FILE);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn cell(&self, seed: u64, strategy: StrategyName) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.seed == seed && c.strategy == strategy)
    }

    pub fn metrics(&self, seed: u64, strategy: StrategyName) -> Option<&CellMetrics> {
        self.cell(seed, strategy).and_then(CellReport::metrics)
    }

    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.metrics().is_none()).count()
    }

    fn missing_rows(&self, required: &[StrategyName]) -> Vec<String> {
        let mut missing = Vec::new();
        for &seed in &self.seeds {
            for &s in required {
                match self.cell(seed, s) {
                    None => missing.push(format!("{} seed {seed}: absent", s.as_str())),
                    Some(CellReport {
                        outcome: CellOutcome::Failed { error },
                        ..
                    }) => missing.push(format!("{} seed {seed}: failed ({error})", s.as_str())),
                    Some(_) => {}
                }
            }
        }
        missing
    }
}

/// One line per cell with the headline metrics.
pub fn cells_csv(report: &RunReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seed",
        "strategy",
        "status",
        "flops_dense",
        "flops_sparse",
        "n_pruned",
        "pruned_fraction",
        "retained_for_safety",
        "epochs",
        "accuracy",
        "f1",
        "probe_epochs",
        "n_windows",
        "epsilon_retrained",
        "epsilon_masked",
        "shap_rho",
        "shap_top3",
        "error",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for c in &report.cells {
        match &c.outcome {
            CellOutcome::Ok(m) => w.write_record([
                c.seed.to_string(),
                c.strategy.as_str().into(),
                "ok".into(),
                m.flops_dense.to_string(),
                m.flops_sparse.to_string(),
                m.n_pruned.to_string(),
                m.pruned_fraction.to_string(),
                m.retained_for_safety.to_string(),
                m.epochs.to_string(),
                m.accuracy.to_string(),
                m.f1.to_string(),
                opt(m.probe_epochs.map(|v| v.to_string())),
                opt(m.n_windows.map(|v| v.to_string())),
                opt(m.epsilon_retrained.map(|v| v.to_string())),
                opt(m.epsilon_masked.map(|v| v.to_string())),
                opt(m.shap_consistency.map(|s| s.spearman_rho.to_string())),
                opt(m.shap_consistency.map(|s| s.topk_overlap.to_string())),
                String::new(),
            ])?,
            CellOutcome::Failed { error } => {
                let mut row = vec![c.seed.to_string(), c.strategy.as_str().into(), "failed".into()];
                row.extend(std::iter::repeat_n(String::new(), 14));
                row.push(error.clone());
                w.write_record(row)?
            }
        }
    }
    into_bytes(w)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

/// Median with the two middle values averaged.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Clone, Copy)]
enum Fmt {
    Count,
    Score,
    Percent,
    Alpha,
}

impl Fmt {
    fn show(self, v: f64) -> String {
        if v.is_nan() {
            return String::new();
        }
        match self {
            Fmt::Count if v.fract() == 0.0 => format!("{v:.0}"),
            Fmt::Count => format!("{v:.1}"),
            Fmt::Score => format!("{v:.4}"),
            Fmt::Percent => format!("{v:.2}"),
            Fmt::Alpha => format!("{v:.2}"),
        }
    }
}

type Extract = fn(&RunReport, u64) -> f64;

struct Column {
    header: String,
    fmt: Fmt,
    get: Extract,
}

fn col(header: &str, fmt: Fmt, get: Extract) -> Column {
    Column {
        header: header.into(),
        fmt,
        get,
    }
}

fn m(r: &RunReport, seed: u64, s: StrategyName) -> &CellMetrics {
    r.metrics(seed, s).expect("rows checked before tabulation")
}

use StrategyName::{Dense, LegcnetFt, LegcnetPt, Magnitude, Random};

fn t1_columns() -> Vec<Column> {
    vec![
        col("Flops - DN", Fmt::Count, |r, s| m(r, s, Dense).flops_dense as f64),
        col("Flops - LEGCNet-FT", Fmt::Count, |r, s| m(r, s, LegcnetFt).flops_sparse as f64),
        col("Non causal Weights", Fmt::Count, |r, s| m(r, s, LegcnetFt).n_pruned as f64),
        col("Epochs DN", Fmt::Count, |r, s| m(r, s, Dense).epochs as f64),
        col("Epochs LEGCNet-FT", Fmt::Count, |r, s| m(r, s, LegcnetFt).epochs as f64),
        col("Accuracy DN", Fmt::Score, |r, s| m(r, s, Dense).accuracy),
        col("Accuracy LEGCNet-FT", Fmt::Score, |r, s| m(r, s, LegcnetFt).accuracy),
        col("F1-score DN", Fmt::Score, |r, s| m(r, s, Dense).f1),
        col("F1-score LEGCNet-FT", Fmt::Score, |r, s| m(r, s, LegcnetFt).f1),
        col("%Pruned LEGCNet-FT", Fmt::Percent, |r, s| 100.0 * m(r, s, LegcnetFt).pruned_fraction),
    ]
}

fn t2_columns() -> Vec<Column> {
    vec![
        col("Flops (SN) - LEGCNet-FT", Fmt::Count, |r, s| m(r, s, LegcnetFt).flops_sparse as f64),
        col("Flops (SN) - LEGCNet-PT", Fmt::Count, |r, s| m(r, s, LegcnetPt).flops_sparse as f64),
        col("Epochs (SN) LEGCNet-FT", Fmt::Count, |r, s| m(r, s, LegcnetFt).epochs as f64),
        col("Epochs (SN) LEGCNet-PT", Fmt::Count, |r, s| m(r, s, LegcnetPt).epochs as f64),
        col("Accuracy (SN) LEGCNet-FT", Fmt::Score, |r, s| m(r, s, LegcnetFt).accuracy),
        col("Accuracy (SN) LEGCNet-PT", Fmt::Score, |r, s| m(r, s, LegcnetPt).accuracy),
        col("F1-score (SN) LEGCNet-FT", Fmt::Score, |r, s| m(r, s, LegcnetFt).f1),
        col("F1-score (SN) LEGCNet-PT", Fmt::Score, |r, s| m(r, s, LegcnetPt).f1),
        col("%Pruned LEGCNet-PT", Fmt::Percent, |r, s| 100.0 * m(r, s, LegcnetPt).pruned_fraction),
    ]
}

fn t3_columns() -> Vec<Column> {
    vec![
        col("Epochs (SN) Random", Fmt::Count, |r, s| m(r, s, Random).epochs as f64),
        col("Accuracy (SN) Random", Fmt::Score, |r, s| m(r, s, Random).accuracy),
        col("Accuracy (SN) Magnitude", Fmt::Score, |r, s| m(r, s, Magnitude).accuracy),
        col("F1-score (SN) Random", Fmt::Score, |r, s| m(r, s, Random).f1),
        col("F1-score (SN) Magnitude", Fmt::Score, |r, s| m(r, s, Magnitude).f1),
    ]
}

/// Seed whose row scores highest on `key`; ties go to the lower seed.
fn best_seed(report: &RunReport, key: Extract) -> Option<u64> {
    let mut best: Option<(u64, f64)> = None;
    for &s in &report.seeds {
        let v = key(report, s);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((s, v));
        }
    }
    best.map(|(s, _)| s)
}

/// Per-seed rows, then the best-of-seeds row and the column-wise median row.
fn seed_table(
    report: &RunReport,
    first_header: &str,
    first: &dyn Fn(&RunReport, &[u64]) -> String,
    columns: &[Column],
    key: Extract,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![first_header.to_string()];
    header.extend(columns.iter().map(|c| c.header.clone()));
    w.write_record(&header)?;
    let row = |label: String, vals: Vec<String>| {
        let mut r = vec![label];
        r.extend(vals);
        r
    };
    for &s in &report.seeds {
        let vals = columns.iter().map(|c| c.fmt.show((c.get)(report, s))).collect();
        w.write_record(row(format!("{} [seed {s}]", first(report, &[s])), vals))?;
    }
    if let Some(b) = best_seed(report, key) {
        let vals = columns.iter().map(|c| c.fmt.show((c.get)(report, b))).collect();
        w.write_record(row(format!("{} [best: seed {b}]", first(report, &[b])), vals))?;
    }
    let vals = columns
        .iter()
        .map(|c| {
            let v: Vec<f64> = report.seeds.iter().map(|&s| (c.get)(report, s)).collect();
            c.fmt.show(median(&v))
        })
        .collect();
    w.write_record(row(format!("{} [median]", first(report, &report.seeds)), vals))?;
    into_bytes(w)
}

fn t4_table(report: &RunReport) -> Result<Vec<u8>, CliError> {
    let mut layers: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for c in &report.cells {
        for l in c.metrics().map(|m| m.esd.as_slice()).unwrap_or_default() {
            layers.insert(l.layer, (l.fan_in, l.fan_out));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Model".to_string()];
    for (l, (i, o)) in &layers {
        header.push(format!("Layer{l}: {i}-{o} alpha"));
        header.push(format!("Layer{l}: {i}-{o} alpha_w"));
    }
    w.write_record(&header)?;
    let value = |m: Option<&CellMetrics>, layer: usize, which: fn(&LayerEsd) -> f64| -> f64 {
        m.and_then(|m| m.esd.iter().find(|e| e.layer == layer)).map_or(f64::NAN, which)
    };
    let fields: [fn(&LayerEsd) -> f64; 2] = [|e| e.alpha, |e| e.alpha_w];
    for &strategy in &report.strategies {
        let present: Vec<u64> = report
            .seeds
            .iter()
            .copied()
            .filter(|&s| report.metrics(s, strategy).is_some())
            .collect();
        if present.is_empty() {
            continue;
        }
        for &s in &present {
            let mut row = vec![format!("{} [seed {s}]", strategy.display())];
            for &l in layers.keys() {
                for f in fields {
                    row.push(Fmt::Alpha.show(value(report.metrics(s, strategy), l, f)));
                }
            }
            w.write_record(&row)?;
        }
        let mut row = vec![format!("{} [median]", strategy.display())];
        for &l in layers.keys() {
            for f in fields {
                let v: Vec<f64> = present
                    .iter()
                    .map(|&s| value(report.metrics(s, strategy), l, f))
                    .filter(|v| !v.is_nan())
                    .collect();
                row.push(Fmt::Alpha.show(median(&v)));
            }
        }
        w.write_record(&row)?;
    }
    into_bytes(w)
}

/// CSV bytes of one table. Every seed needs a successful row for each of the
/// table's strategies; otherwise all missing rows are listed in the error.
pub fn report_table(report: &RunReport, table: TableId) -> Result<Vec<u8>, CliError> {
    let missing = report.missing_rows(table.required());
    if !missing.is_empty() {
        return Err(CliError::MissingRows(missing));
    }
    let label = report.label.clone();
    let plain = move |_: &RunReport, _: &[u64]| label.clone();
    match table {
        TableId::T1 => seed_table(
            report,
            "Dataset (hidden neurons)",
            &plain,
            &t1_columns(),
            |r, s| m(r, s, LegcnetFt).accuracy,
        ),
        TableId::T2 => {
            let name = report.name.clone();
            let with_probe = move |r: &RunReport, seeds: &[u64]| {
                let p: Vec<f64> = seeds
                    .iter()
                    .filter_map(|&s| m(r, s, LegcnetPt).probe_epochs)
                    .map(|v| v as f64)
                    .collect();
                format!("{name}({})", Fmt::Count.show(median(&p)))
            };
            seed_table(report, "Data(Epochs*)", &with_probe, &t2_columns(), |r, s| {
                m(r, s, LegcnetPt).accuracy
            })
        }
        TableId::T3 => {
            let name = report.name.clone();
            seed_table(report, "Data", &move |_, _| name.clone(), &t3_columns(), |r, s| {
                m(r, s, Random).accuracy
            })
        }
        TableId::T4 => t4_table(report),
    }
}
