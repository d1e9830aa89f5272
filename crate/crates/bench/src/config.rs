//! JSON experiment configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ftlab_core::metrics::Metric;
use ftlab_core::strategy::StrategyConfig;
use ftlab_core::synth::TaskSpec;
use ftlab_core::train::LR_GRID;
use ftlab_core::zoo::Family;

use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub architectures: Vec<Family>,
    #[serde(default)]
    pub strategies: Vec<StrategyConfig>,
    #[serde(default = "default_lrs")]
    pub base_lrs: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    /// Side of the square network input after preprocessing.
    #[serde(default = "default_crop")]
    pub crop: usize,
    pub paths: Paths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub task: TaskSpec,
    #[serde(default)]
    pub seed: u64,
    /// Metric key used for best-method and effectiveness counting. Defaults
    /// to mAP for multi-label tasks and accuracy otherwise.
    #[serde(default)]
    pub primary_metric: Option<String>,
}

impl DatasetConfig {
    pub fn primary_metric(&self) -> Metric {
        self.primary_metric
            .as_deref()
            .and_then(Metric::from_key)
            .unwrap_or_else(|| Metric::primary_for(self.task.kind))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Fail a trial if its frozen-parameter or early-stopping invariants break.
    pub check_invariants: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 50,
            patience: 5,
            batch_size: 64,
            check_invariants: false,
        }
    }
}

/// Source-domain training that stands in for the pre-trained checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub source: TaskSpec,
    pub epochs: usize,
    pub patience: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            source: TaskSpec::multi_class(4, 2000, 500, 32),
            epochs: 10,
            patience: 3,
            base_lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Records, FTDS files and checkpoints live under here by default.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Paths {
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoints"))
    }

    pub fn records(&self) -> PathBuf {
        self.out_dir.join("records.jsonl")
    }
}

fn default_lrs() -> Vec<f64> {
    LR_GRID.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_crop() -> usize {
    32
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: BenchConfig = serde_path_to_error::deserialize(de).map_err(|e| BenchError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Cross-field checks that serde cannot express. Errors carry the JSON
    /// path of the offending value.
    pub fn validate(&self) -> Result<(), BenchError> {
        let schema = |path: String, message: String| BenchError::Schema { path, message };
        let mut names = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if d.name.is_empty() || d.name.contains(['/', '\\']) || !names.insert(&d.name) {
                return Err(schema(
                    format!("datasets[{i}].name"),
                    format!("dataset name {:?} must be non-empty, unique and free of slashes", d.name),
                ));
            }
            d.task
                .validate()
                .map_err(|e| schema(format!("datasets[{i}].task"), e.to_string()))?;
            if let Some(key) = &d.primary_metric {
                if Metric::from_key(key).is_none() {
                    return Err(schema(
                        format!("datasets[{i}].primary_metric"),
                        format!("unknown metric {key:?}"),
                    ));
                }
            }
        }
        let mut labels = BTreeSet::new();
        for (i, s) in self.strategies.iter().enumerate() {
            s.validate()
                .map_err(|e| schema(format!("strategies[{i}]"), e.to_string()))?;
            if !labels.insert(s.kind) {
                return Err(schema(
                    format!("strategies[{i}].kind"),
                    format!("strategy {} listed twice", s.kind.label()),
                ));
            }
        }
        if BTreeSet::from_iter(&self.architectures).len() != self.architectures.len() {
            return Err(schema("architectures".into(), "duplicate architecture".into()));
        }
        for (i, lr) in self.base_lrs.iter().enumerate() {
            if !(lr.is_finite() && *lr > 0.0) {
                return Err(schema(format!("base_lrs[{i}]"), "learning rate must be positive".into()));
            }
        }
        if BTreeSet::from_iter(&self.seeds).len() != self.seeds.len() {
            return Err(schema("seeds".into(), "duplicate seed".into()));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(schema("training.batch_size".into(), "must be at least 1".into()));
        }
        if t.epochs > 0 && t.patience >= t.epochs {
            return Err(schema("training.patience".into(), "must be smaller than epochs".into()));
        }
        let p = &self.pretrain;
        p.source
            .validate()
            .map_err(|e| schema("pretrain.source".into(), e.to_string()))?;
        if p.batch_size == 0 || !(p.base_lr > 0.0) || (p.epochs > 0 && p.patience >= p.epochs) {
            return Err(schema(
                "pretrain".into(),
                "needs batch_size >= 1, base_lr > 0 and patience < epochs".into(),
            ));
        }
        if self.crop < 16 {
            return Err(schema("crop".into(), "crop must be at least 16 for four pooling stages".into()));
        }
        Ok(())
    }
}
