//! The run configuration file.
//!
//! One TOML document with `[model]`, `[train]` and `[data]` tables. Every key
//! has a default, unknown keys are rejected, and relative paths are resolved
//! against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use ketm::fusion::Head;
use ketm::matching::MatchConfig;
use ketm::model::{ModelConfig, MAX_LEN};
use ketm::train::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub conv_width: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub head: Head,
    pub knowledge: bool,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `label<TAB>index` lines. Defaults to entailment/neutral/contradiction.
    pub labels: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub min_freq: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = MatchConfig::default();
        ModelSection {
            embed_dim: 200,
            hidden: m.hidden,
            heads: m.heads,
            conv_width: m.conv_width,
            blocks: m.blocks,
            dropout: m.dropout,
            head: Head::Bounded,
            knowledge: true,
            max_len: MAX_LEN,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            clip_norm: t.clip_norm,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.data.resolve(base);
        Ok(config)
    }

    /// Parses and validates without touching the filesystem. Paths stay as
    /// written.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Numeric fields must be positive, except `epochs` (0 evaluates the
    /// initial parameters) and `dropout` (a rate in `[0, 1)`).
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        let t = &self.train;
        let positive = [
            ("model.embed_dim", m.embed_dim),
            ("model.hidden", m.hidden),
            ("model.heads", m.heads),
            ("model.conv_width", m.conv_width),
            ("model.blocks", m.blocks),
            ("model.max_len", m.max_len),
            ("train.batch_size", t.batch_size),
            ("data.min_freq", self.data.min_freq.unwrap_or(1)),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) || !(t.clip_norm > 0.0 && t.clip_norm.is_finite()) {
            return Err(CliError::Config(
                "train.lr and train.clip_norm must be positive".into(),
            ));
        }
        self.match_config().validate()?;
        Ok(())
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            hidden: self.model.hidden,
            heads: self.model.heads,
            conv_width: self.model.conv_width,
            blocks: self.model.blocks,
            dropout: self.model.dropout,
        }
    }

    pub fn model_config(&self, vocab_size: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.model.embed_dim,
            matching: self.match_config(),
            classes,
            head: self.model.head,
            knowledge: self.model.knowledge,
            max_len: self.model.max_len,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            clip_norm: self.train.clip_norm,
            seed: self.seed,
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.data
            .checkpoint_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("checkpoints"))
    }
}

impl DataSection {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.labels,
            &mut self.train,
            &mut self.validation,
            &mut self.test,
            &mut self.dictionary,
            &mut self.checkpoint_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.checkpoint_dir.is_none() {
            self.checkpoint_dir = Some(base.join("checkpoints"));
        }
    }
}
