//! Run configuration. Files are JSON objects keyed by flat dotted names such
//! as `train.k` or `layout.min_dist`; a nested `{"train": {...}}` section is
//! accepted too. A top-level `seed` seeds training, layout and metrics unless
//! a section sets its own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;
use crate::layout::LayoutConfig;
use crate::metrics::MetricsConfig;
use crate::mmcr::TrainConfig;

const SECTIONS: [&str; 8] = ["dataset", "train", "fuzzy", "layout", "metrics", "output", "bench", "sweep"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Mplb,
    Csv,
    TwoGaussians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Resolved against the config file's directory when relative.
    pub path: Option<PathBuf>,
    pub has_header: bool,
    pub label_column: Option<usize>,
    pub image_shape: Option<(usize, usize)>,
    /// Class names indexed by label id.
    pub label_names: Option<Vec<String>>,
    /// Seeded row subsample taken right after loading.
    pub subsample: Option<usize>,
    pub standardize: bool,
    pub seed: u64,
    // two-Gaussian generator
    pub n: usize,
    pub dim: usize,
    pub separation: f64,
    pub label_noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mplb,
            path: None,
            has_header: true,
            label_column: None,
            image_shape: None,
            label_names: None,
            subsample: None,
            standardize: false,
            seed: 0,
            n: 200,
            dim: 10,
            separation: 3.0,
            label_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzyConfig {
    pub tau: f64,
    /// Probabilistic-or symmetrization; when off the larger directed weight is kept.
    pub symmetrize: bool,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        Self {
            tau: crate::fuzzy::DEFAULT_TAU,
            symmetrize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub viewer_bundle: bool,
    pub fuzzy_graph: bool,
    pub metrics: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            viewer_bundle: true,
            fuzzy_graph: true,
            metrics: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Maple,
    BaselineUmap,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Maple => "maple",
            Method::BaselineUmap => "baseline_umap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Point counts for the N sweep.
    pub n_grid: Vec<usize>,
    /// Image dimensions (perfect squares) for the D sweep; `native` keeps the source size.
    pub n_sweep_dim: Option<usize>,
    pub d_grid: Vec<usize>,
    pub d_sweep_n: usize,
    pub k_grid: Vec<usize>,
    pub methods: Vec<Method>,
    pub memory_budget_mb: u64,
    /// Extra attempts for a cell that breaks monotonicity in N.
    pub retries: usize,
    pub train_epochs: Option<usize>,
    pub layout_epochs: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![2_500, 5_000, 10_000, 20_000, 50_000, 100_000],
            n_sweep_dim: None,
            d_grid: vec![64, 784, 2_500, 10_000],
            d_sweep_n: 10_000,
            k_grid: vec![15, 30],
            methods: vec![Method::Maple, Method::BaselineUmap],
            memory_budget_mb: 3_072,
            retries: 1,
            train_epochs: None,
            layout_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_grid: vec![5, 15, 30],
            lambda_grid: vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 2.0],
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub fuzzy: FuzzyConfig,
    pub layout: LayoutConfig,
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
    pub bench: BenchConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(p) = cfg.dataset.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let root: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(root) = root else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let mut nested = Map::new();
        let mut explicit_seed = Vec::new();
        for (key, val) in root {
            if key == "seed" {
                nested.insert(key, val);
                continue;
            }
            let (section, field) = match key.split_once('.') {
                Some((s, f)) => (s.to_string(), Some(f.to_string())),
                None => (key.clone(), None),
            };
            if !SECTIONS.contains(&section.as_str()) {
                return Err(CliError::Config(format!("unknown config key `{key}`")));
            }
            let entry = nested
                .entry(section.clone())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("sections are objects");
            match (field, val) {
                (Some(f), v) => {
                    if f.contains('.') {
                        return Err(CliError::Config(format!("config key `{key}` is nested too deeply")));
                    }
                    if f == "seed" {
                        explicit_seed.push(section.clone());
                    }
                    if entry.insert(f, v).is_some() {
                        return Err(CliError::Config(format!("config key `{key}` given twice")));
                    }
                }
                (None, Value::Object(m)) => {
                    for (f, v) in m {
                        if f == "seed" {
                            explicit_seed.push(section.clone());
                        }
                        if entry.insert(f.clone(), v).is_some() {
                            return Err(CliError::Config(format!("config key `{section}.{f}` given twice")));
                        }
                    }
                }
                (None, _) => return Err(CliError::Config(format!("section `{key}` must be an object"))),
            }
        }
        let mut cfg: RunConfig =
            serde_json::from_value(Value::Object(nested)).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            for s in ["train", "layout", "metrics"] {
                if !explicit_seed.iter().any(|e| e == s) {
                    cfg.set_section_seed(s, seed);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set_section_seed(&mut self, section: &str, seed: u64) {
        match section {
            "train" => self.train.seed = seed,
            "layout" => self.layout.seed = seed,
            _ => self.metrics.seed = seed,
        }
    }

    /// Applies a command-line seed to every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        for s in ["train", "layout", "metrics"] {
            self.set_section_seed(s, seed);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.layout.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.fuzzy.tau > 0.0 && self.fuzzy.tau.is_finite()) {
            return Err(CliError::Config(format!("fuzzy.tau must be positive, got {}", self.fuzzy.tau)));
        }
        let d = &self.dataset;
        if matches!(d.kind, DatasetKind::Mplb | DatasetKind::Csv) && d.path.is_none() {
            return Err(CliError::Config("dataset.path is required for file datasets".into()));
        }
        if !(0.0..=100.0).contains(&self.metrics.hausdorff_percentile) {
            return Err(CliError::Config("metrics.hausdorff_percentile must be in [0, 100]".into()));
        }
        if self.sweep.seeds == 0 {
            return Err(CliError::Config("sweep.seeds must be at least 1".into()));
        }
        Ok(())
    }

    /// Flat dotted form, the same shape config files use.
    pub fn to_flat_json(&self) -> Value {
        let nested = serde_json::to_value(self).expect("config serializes");
        let mut flat = Map::new();
        for (section, v) in nested.as_object().expect("object") {
            match v {
                Value::Object(m) => {
                    for (f, fv) in m {
                        flat.insert(format!("{section}.{f}"), fv.clone());
                    }
                }
                other => {
                    flat.insert(section.clone(), other.clone());
                }
            }
        }
        Value::Object(flat)
    }
}
