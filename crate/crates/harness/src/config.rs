//! Experiment configuration documents (JSON).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use siamese_core::data::ImbalanceSpec;
use siamese_core::{
    AugmentConfig, BackboneConfig, ClassifierKind, ImbalanceLevel, LossKind, PairingConfig,
    TrainConfig,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Siamese,
    SingleCnn,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Siamese => "siamese",
            Mode::SingleCnn => "single_cnn",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "siamese" => Ok(Mode::Siamese),
            "single_cnn" => Ok(Mode::SingleCnn),
            _ => Err(format!(
                "unknown mode `{s}`, expected siamese or single_cnn"
            )),
        }
    }
}

/// Backbone initialization: `"scratch"`, `{"imported": "<weights file>"}` or
/// `{"pretrain": "<dataset name>"}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Scratch,
    Imported(PathBuf),
    Pretrain(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Technique {
    pub init: Init,
    /// Number of source-dataset training samples used for pretraining.
    pub pretrain_count: usize,
    pub augment: AugmentConfig,
    pub pairing: PairingConfig,
    pub loss: LossKind,
    pub classifiers: Vec<ClassifierKind>,
}

impl Default for Technique {
    fn default() -> Self {
        Self {
            init: Init::Scratch,
            pretrain_count: 1700,
            augment: AugmentConfig::default(),
            pairing: PairingConfig::default(),
            loss: LossKind::Plain,
            classifiers: vec![ClassifierKind::Histogram],
        }
    }
}

impl Technique {
    /// Compact, CSV-safe description of everything but the classifier.
    pub fn signature(&self, mode: Mode) -> String {
        let init = match &self.init {
            Init::Scratch => "scratch".to_string(),
            Init::Imported(p) => format!(
                "imported({})",
                p.file_name().unwrap_or_default().to_string_lossy()
            ),
            Init::Pretrain(src) => format!("pretrain({src})"),
        };
        let a = &self.augment;
        let aug = if a.is_identity() {
            "0".to_string()
        } else {
            let mut s = format!("{}", a.alpha);
            for (on, tag) in [
                (a.enable_shift, 't'),
                (a.enable_scale, 's'),
                (a.enable_rotate, 'r'),
            ] {
                if on {
                    s.push(tag);
                }
            }
            s
        };
        match mode {
            Mode::Siamese => format!(
                "init={init};aug={aug};pairs={};balanced={};loss={}",
                self.pairing.ratio,
                u8::from(self.pairing.balanced_sampling),
                match self.loss {
                    LossKind::Plain => "plain",
                    LossKind::Weighted => "weighted",
                }
            ),
            Mode::SingleCnn => format!("single_cnn;init={init};aug={aug}"),
        }
    }
}

/// Optimizer and schedule settings shared by every cell; the loss comes
/// from the technique and the seed from the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub margin: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            decay: d.decay,
            margin: d.margin,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            decay: self.decay,
            margin: self.margin,
            loss,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset name to manifest path.
    pub datasets: BTreeMap<String, PathBuf>,
    /// `[train_on, evaluate_on]` pairs.
    pub grid: Vec<(String, String)>,
    #[serde(default = "all_levels")]
    pub imbalance_levels: Vec<ImbalanceLevel>,
    #[serde(default = "default_majority")]
    pub majority_counts: Vec<usize>,
    #[serde(default = "default_techniques")]
    pub techniques: Vec<Technique>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainSettings,
}

fn all_levels() -> Vec<ImbalanceLevel> {
    ImbalanceLevel::ALL.to_vec()
}

fn default_majority() -> Vec<usize> {
    vec![100]
}

fn default_techniques() -> Vec<Technique> {
    vec![Technique::default()]
}

fn default_folds() -> usize {
    10
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(datasets: BTreeMap<String, PathBuf>, grid: Vec<(String, String)>) -> Self {
        Self {
            datasets,
            grid,
            imbalance_levels: all_levels(),
            majority_counts: default_majority(),
            techniques: default_techniques(),
            folds: default_folds(),
            seed: 0,
            mode: Mode::Siamese,
            output_dir: None,
            backbone: BackboneConfig::default(),
            train: TrainSettings::default(),
        }
    }

    /// Dataset names that are trained on, in first-appearance order.
    pub fn sources(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (from, _) in &self.grid {
            if !out.contains(&from.as_str()) {
                out.push(from);
            }
        }
        out
    }

    /// Evaluation targets of `from`, in grid order.
    pub fn targets(&self, from: &str) -> Vec<&str> {
        self.grid
            .iter()
            .filter(|(f, _)| f == from)
            .map(|(_, t)| t.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        for (from, to) in &self.grid {
            for name in [from, to] {
                if !self.datasets.contains_key(name) {
                    return bad(format!("grid references unknown dataset `{name}`"));
                }
            }
        }
        for t in &self.techniques {
            if let Init::Pretrain(src) = &t.init {
                if !self.datasets.contains_key(src) {
                    return bad(format!(
                        "pretrain source `{src}` is not a configured dataset"
                    ));
                }
                if t.pretrain_count == 0 {
                    return bad("pretrain_count must be positive".into());
                }
            }
            if t.classifiers.is_empty() && self.mode == Mode::Siamese {
                return bad("technique lists no classifiers".into());
            }
            t.augment
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            self.train
                .to_train_config(t.loss, self.seed)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.imbalance_levels.is_empty()
            || self.majority_counts.is_empty()
            || self.techniques.is_empty()
        {
            return bad(
                "imbalance_levels, majority_counts and techniques must be non-empty".into(),
            );
        }
        if self.folds == 0 {
            return bad("folds must be positive".into());
        }
        for &m in &self.majority_counts {
            for &level in &self.imbalance_levels {
                ImbalanceSpec::for_level(level, m).map_err(|e| {
                    ConfigError::Invalid(format!("level {level} at majority {m}: {e}"))
                })?;
            }
        }
        self.backbone
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Relative manifest and weight paths become relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.datasets.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for t in &mut self.techniques {
            if let Init::Imported(p) = &mut t.init {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(p) = &mut self.output_dir {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses and validates a config document; schema errors carry the key
/// path of the offending value.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path`, resolving relative paths inside it against its directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_config_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
