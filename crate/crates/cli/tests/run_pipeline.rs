use std::path::{Path, PathBuf};
use std::process::Command;

use legcnet_cli::stages::{MASK_FILE, PARAMS_FILE};
use legcnet_cli::{report_table, run, CellOutcome, CliError, LoadedConfig, RunReport, StrategyName, TableId};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).canonicalize().unwrap()
}

/// An Iris experiment written to `dir/exp.toml`; `extra` goes at top level.
fn iris_toml(dir: &Path, extra: &str, strategies: &str) -> PathBuf {
    let text = format!(
        r#"name = "IrisTest"
hidden = [6]
seeds = [1, 2]
strategies = [{strategies}]
{extra}

[dataset.source]
format = "csv"
path = "{}"
label = "species"

[pipeline]
window_len = 50

[pipeline.train]
max_epochs = 60

[diagnostics]
shap_background = 10
shap_samples = 5
"#,
        fixture("iris.csv").display()
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_legcnet"))
}

#[test]
fn dense_only_config_trains_one_cell_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let l = LoadedConfig::load(iris_toml(tmp.path(), "", "")).unwrap();
    assert_eq!(l.config.strategies, vec![StrategyName::Dense]);
    let out = run(&l, Some(tmp.path())).unwrap();
    assert_eq!(out.report.cells.len(), 2);
    assert_eq!(out.report.n_failed(), 0);
    for seed in [1, 2] {
        let cell = out.dir.join(format!("seed-{seed}/dense"));
        assert!(cell.join(PARAMS_FILE).exists());
        assert!(!cell.join(MASK_FILE).exists());
        assert_eq!(out.report.metrics(seed, StrategyName::Dense).unwrap().n_pruned, 0);
    }
    assert!(out.dir.join("T4.csv").exists());
    assert!(!out.dir.join("T1.csv").exists());
}

#[test]
fn failing_cell_is_recorded_and_siblings_finish() {
    let tmp = tempfile::tempdir().unwrap();
    // one probe epoch is 8 iterations, far below one 50-step window
    let cfg = iris_toml(tmp.path(), "probe_epochs = 1", r#""legcnet-ft", "legcnet-pt""#);
    let l = LoadedConfig::load(&cfg).unwrap();
    let out = run(&l, Some(tmp.path())).unwrap();
    assert_eq!(out.report.n_failed(), 2);
    for seed in [1, 2] {
        let pt = out.report.cell(seed, StrategyName::LegcnetPt).unwrap();
        assert!(matches!(&pt.outcome, CellOutcome::Failed { error } if !error.is_empty()));
        assert!(out.report.metrics(seed, StrategyName::LegcnetFt).is_some());
    }
    match report_table(&out.report, TableId::T2) {
        Err(CliError::MissingRows(rows)) => {
            assert_eq!(rows.len(), 2);
            assert!(rows[0].starts_with("legcnet-pt seed 1: failed"));
        }
        other => panic!("expected missing rows, got {other:?}"),
    }
    assert!(out.dir.join("T1.csv").exists());
    assert!(!out.dir.join("T2.csv").exists());

    let status = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("cli")).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn report_without_a_run_lists_missing_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = iris_toml(tmp.path(), "", r#""legcnet-ft""#);
    let out = bin()
        .args(["report", "--table", "T1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("dense seed 1: absent"), "{err}");
    assert!(err.contains("legcnet-ft seed 2: absent"), "{err}");
}

#[test]
fn table_one_header_and_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = iris_toml(tmp.path(), "", r#""legcnet-ft""#);
    let status = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(tmp.path()).status().unwrap();
    assert!(status.success());
    let out = bin()
        .args(["report", "--table", "T1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "Dataset (hidden neurons),Flops - DN,Flops - LEGCNet-FT,Non causal Weights,Epochs DN,\
         Epochs LEGCNet-FT,Accuracy DN,Accuracy LEGCNet-FT,F1-score DN,F1-score LEGCNet-FT,%Pruned LEGCNet-FT"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("IrisTest (6) [seed 1],42,"));
    assert!(lines[3].contains("[best: seed"));
    assert!(lines[4].contains("[median]"));
}

#[test]
fn analyze_reproduces_pruned_sets_and_diagnose_rewrites_spectra() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = iris_toml(tmp.path(), "", r#""legcnet-ft", "random""#);
    let l = LoadedConfig::load(&cfg).unwrap();
    let out = run(&l, Some(tmp.path())).unwrap();
    assert_eq!(out.report.n_failed(), 0);

    let analyzed = legcnet_cli::run::analyze_run(&l, Some(tmp.path())).unwrap();
    assert_eq!(analyzed.len(), 2);
    for (cell, pr) in &analyzed {
        let original = std::fs::read(cell.join("pruned.csv")).unwrap();
        let again = std::fs::read(cell.join("analysis/pruned.csv")).unwrap();
        assert_eq!(original, again, "{}", cell.display());
        let seed: u64 = cell.parent().unwrap().file_name().unwrap().to_str().unwrap()[5..].parse().unwrap();
        assert_eq!(pr.n_pruned, out.report.metrics(seed, StrategyName::LegcnetFt).unwrap().n_pruned);
    }

    let diagnosed = legcnet_cli::run::diagnose_run(&l, Some(tmp.path())).unwrap();
    assert_eq!(diagnosed.len(), 6);
    for cell in &diagnosed {
        assert_eq!(
            std::fs::read(cell.join("diagnostics/shap.csv")).unwrap(),
            std::fs::read(cell.join("shap.csv")).unwrap()
        );
    }
    let reloaded = RunReport::load(&out.dir).unwrap();
    assert_eq!(reloaded.cells.len(), out.report.cells.len());
}
