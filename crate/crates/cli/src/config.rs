//! Experiment configuration files (TOML).
//!
//! Dataset paths are relative to the directory holding the config file. The
//! config hash covers the parsed config (minus the output root) and the bytes
//! of every dataset file, so editing either moves the run to a new directory.

use std::fs;
use std::path::{Path, PathBuf};

use legcnet::data::{load_csv, load_idx, stratified_subsample, CsvSchema, Dataset, NormalizationKind};
use legcnet::diagnostics::ShapOptions;
use legcnet::pruning::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Smallest window length accepted in a config.
pub const MIN_WINDOW_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Dense,
    LegcnetFt,
    LegcnetPt,
    Random,
    Magnitude,
}

impl StrategyName {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyName::Dense => "dense",
            StrategyName::LegcnetFt => "legcnet-ft",
            StrategyName::LegcnetPt => "legcnet-pt",
            StrategyName::Random => "random",
            StrategyName::Magnitude => "magnitude",
        }
    }

    /// Label used in the report tables.
    pub fn display(&self) -> &'static str {
        match self {
            StrategyName::Dense => "Dense",
            StrategyName::LegcnetFt => "LEGCNet-FT",
            StrategyName::LegcnetPt => "LEGCNet-PT",
            StrategyName::Random => "Random",
            StrategyName::Magnitude => "Magnitude",
        }
    }

    pub fn is_baseline(&self) -> bool {
        matches!(self, StrategyName::Random | StrategyName::Magnitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label: String,
        #[serde(default)]
        schema: CsvSchema,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DataSource {
    pub fn files(&self) -> Vec<&Path> {
        match self {
            DataSource::Csv { path, .. } => vec![path],
            DataSource::Idx { images, labels } => vec![images, labels],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// The split is shared by every seed; seeds vary the initialization.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub normalization: NormalizationKind,
    /// Keep only the first `n` feature columns.
    #[serde(default)]
    pub features: Option<usize>,
    /// Stratified subsample of this many rows before splitting.
    #[serde(default)]
    pub subsample: Option<usize>,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub esd: bool,
    pub shap: bool,
    /// Background rows drawn from the training set.
    pub shap_background: usize,
    /// Test rows explained per model.
    pub shap_samples: usize,
    pub shap_options: ShapOptions,
    pub closeness: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            esd: true,
            shap: true,
            shap_background: 50,
            shap_samples: 20,
            shap_options: ShapOptions::default(),
            closeness: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Root under which `<name>-<hash>` run directories are created.
    pub dir: PathBuf,
    /// Write both weight trajectories of every LEGCNet cell.
    pub trajectories: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            trajectories: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub hidden: Vec<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyName>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Probe length for legcnet-pt; a tenth of the dense epochs when absent.
    #[serde(default)]
    pub probe_epochs: Option<usize>,
    /// Window length for legcnet-pt; `pipeline.window_len` when absent.
    #[serde(default)]
    pub probe_window_len: Option<usize>,
    /// `train.seed` is replaced by each entry of `seeds`.
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_strategies() -> Vec<StrategyName> {
    vec![StrategyName::Dense, StrategyName::LegcnetFt]
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text)?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sort and dedup strategies and seeds; the dense row is always produced.
    pub fn normalize(&mut self) {
        if !self.strategies.contains(&StrategyName::Dense) {
            self.strategies.push(StrategyName::Dense);
        }
        self.strategies.sort();
        self.strategies.dedup();
        self.seeds.sort();
        self.seeds.dedup();
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} must be a non-empty file name", self.name));
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        for w in std::iter::once(self.pipeline.window_len).chain(self.probe_window_len) {
            if w < MIN_WINDOW_LEN {
                return bad(format!("window length {w} is below the minimum {MIN_WINDOW_LEN}"));
            }
        }
        let has_legcnet = self
            .strategies
            .iter()
            .any(|s| matches!(s, StrategyName::LegcnetFt | StrategyName::LegcnetPt));
        if self.strategies.iter().any(StrategyName::is_baseline) && !has_legcnet {
            return bad("random and magnitude prune as many weights as LEGCNet; add legcnet-ft or legcnet-pt".into());
        }
        if self.probe_epochs == Some(0) {
            return bad("probe_epochs must be >= 1".into());
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return bad(format!("test_fraction {} must be in (0, 1)", self.dataset.test_fraction));
        }
        Ok(())
    }

    /// Restrict to the given seeds and strategies (CLI overrides).
    pub fn with_overrides(mut self, seeds: Option<Vec<u64>>, strategies: &[StrategyName]) -> Result<Self, CliError> {
        if let Some(s) = seeds {
            self.seeds = s;
        }
        if !strategies.is_empty() {
            self.strategies = strategies.to_vec();
        }
        self.normalize();
        self.validate()?;
        Ok(self)
    }

    /// Table label such as `Iris (6)` or `MNIST (50, 30)`.
    pub fn label(&self) -> String {
        let h: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!("{} ({})", self.name, h.join(", "))
    }
}

/// A config together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config = ExperimentConfig::from_toml(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Hex SHA-256 of the config (output root excluded) and the dataset bytes.
    pub fn hash(&self) -> Result<String, CliError> {
        let mut cfg = self.config.clone();
        cfg.output.dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&cfg)?);
        for f in self.config.dataset.source.files() {
            let path = self.resolve(f);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// `<root>/<name>-<first 12 hash digits>`, with `root` from `out` when given.
    pub fn run_dir(&self, out: Option<&Path>) -> Result<PathBuf, CliError> {
        let root = match out {
            Some(o) => o.to_path_buf(),
            None => self.resolve(&self.config.output.dir),
        };
        let hash = self.hash()?;
        Ok(root.join(format!("{}-{}", self.config.name, &hash[..12])))
    }

    pub fn load_dataset(&self) -> Result<(Dataset, usize), CliError> {
        let ds = &self.config.dataset;
        let (mut data, dropped) = match &ds.source {
            DataSource::Csv { path, label, schema } => {
                let l = load_csv(self.resolve(path), label, schema)?;
                (l.dataset, l.dropped_rows)
            }
            DataSource::Idx { images, labels } => (load_idx(self.resolve(images), self.resolve(labels))?, 0),
        };
        if let Some(n) = ds.features {
            data = data.take_features(n)?;
        }
        if let Some(n) = ds.subsample {
            if n < data.n_samples() {
                let idx = stratified_subsample(&data, n, ds.split_seed);
                data = data.subset(&idx);
            }
        }
        Ok((data, dropped))
    }
}
