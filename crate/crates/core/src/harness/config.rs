use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adversarial::AdvConfig;
use crate::autodiff::OptimizerKind;
use crate::error::{read_to_string, Error, Result};
use crate::meta::{CombinerKind, DEFAULT_ATTENTION_HIDDEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ner,
    Pos,
    Nli,
}

impl Task {
    pub fn is_tagging(&self) -> bool {
        !matches!(self, Task::Nli)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Best development metric (ties go to the earliest epoch).
    Dev,
    /// Lowest training loss; for runs without a development set.
    TrainLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Zero-based token column of CoNLL files.
    #[serde(default)]
    pub token_col: usize,
    /// Zero-based tag column; defaults to the last column.
    #[serde(default)]
    pub tag_col: Option<usize>,
    /// One token per line, most frequent first; overrides training counts.
    #[serde(default)]
    pub rank_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceType {
    Static,
    Contextual,
    Char,
    Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub kind: SourceType,
    /// Embedding table (static sources).
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub dim: Option<usize>,
    /// Per-split dump files for contextual sources: keys `train`, `dev`, `test`.
    #[serde(default)]
    pub dumps: BTreeMap<String, PathBuf>,
}

/// Optimizer settings; unset fields take task defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: Option<OptimizerKind>,
    pub lr: Option<f64>,
    pub anneal_factor: Option<f64>,
    pub patience: Option<usize>,
    pub min_lr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedOptimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub anneal_factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

fn default_attention_hidden() -> usize {
    DEFAULT_ATTENTION_HIDDEN
}
fn default_encoder_hidden() -> usize {
    256
}
fn default_nli_hidden() -> usize {
    1024
}
fn default_batch_size() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_combiner() -> CombinerKind {
    CombinerKind::AttFeat
}
fn default_selection() -> Selection {
    Selection::Dev
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataConfig,
    pub sources: Vec<SourceConfig>,
    #[serde(default = "default_combiner")]
    pub combiner: CombinerKind,
    /// Common space size; defaults to the largest source dimension.
    #[serde(default)]
    pub common_dim: Option<usize>,
    #[serde(default = "default_attention_hidden")]
    pub attention_hidden: usize,
    #[serde(default = "default_encoder_hidden")]
    pub encoder_hidden: usize,
    #[serde(default = "default_nli_hidden")]
    pub nli_hidden: usize,
    /// Defaults to 0.1 for taggers and 0.2 for NLI.
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub adversarial: AdvConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_selection")]
    pub selection: Selection,
}

impl RunConfig {
    pub fn dropout(&self) -> f64 {
        self.dropout.unwrap_or(if self.task.is_tagging() { 0.1 } else { 0.2 })
    }

    pub fn optimizer(&self) -> ResolvedOptimizer {
        let o = &self.optimizer;
        let tagging = self.task.is_tagging();
        ResolvedOptimizer {
            kind: o.kind.unwrap_or(if tagging { OptimizerKind::Sgd } else { OptimizerKind::Adam }),
            lr: o.lr.unwrap_or(if tagging { 0.1 } else { 4e-4 }),
            anneal_factor: o.anneal_factor.unwrap_or(if tagging { 0.5 } else { 0.2 }),
            patience: o.patience.unwrap_or(if tagging { 3 } else { 1 }),
            min_lr: o.min_lr.unwrap_or(1e-4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sources.is_empty() {
            return bad("sources: at least one embedding source is required".into());
        }
        for (i, s) in self.sources.iter().enumerate() {
            match s.kind {
                SourceType::Static if s.path.is_none() => {
                    return bad(format!("sources[{i}] ({}): static sources need a path", s.name));
                }
                SourceType::Contextual => {
                    if s.dim.is_none() {
                        return bad(format!("sources[{i}] ({}): contextual sources need a dim", s.name));
                    }
                    if !self.task.is_tagging() {
                        return bad(format!("sources[{i}] ({}): contextual sources are only supported for tagging", s.name));
                    }
                    if let Some(k) = s.dumps.keys().find(|k| !["train", "dev", "test"].contains(&k.as_str())) {
                        return bad(format!("sources[{i}] ({}): unknown dump split {k:?}", s.name));
                    }
                }
                _ => {}
            }
        }
        if self.common_dim == Some(0) {
            return bad("common_dim must be positive".into());
        }
        if self.attention_hidden == 0 || self.encoder_hidden == 0 || self.nli_hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        let d = self.dropout();
        if !(0.0..1.0).contains(&d) {
            return bad(format!("dropout must be in [0, 1), got {d}"));
        }
        self.adversarial.validate()?;
        if self.adversarial.enabled && !self.combiner.projects() {
            return bad("adversarial training needs a combiner with a common space (not concat)".into());
        }
        let o = self.optimizer();
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optimizer.lr must be positive, got {}", o.lr));
        }
        if !(o.anneal_factor > 0.0 && o.anneal_factor <= 1.0) {
            return bad(format!("optimizer.anneal_factor must be in (0, 1], got {}", o.anneal_factor));
        }
        if o.patience == 0 {
            return bad("optimizer.patience must be >= 1".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1".into());
        }
        if self.selection == Selection::Dev && self.data.dev.is_none() {
            return bad("selection \"dev\" needs data.dev (or use \"train_loss\")".into());
        }
        Ok(())
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        self.data.dev.iter_mut().for_each(fix);
        self.data.test.iter_mut().for_each(fix);
        self.data.rank_file.iter_mut().for_each(fix);
        for s in &mut self.sources {
            s.path.iter_mut().for_each(fix);
            s.dumps.values_mut().for_each(fix);
        }
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applies `key.path=value` overrides, validates,
    /// and resolves relative paths against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg = Self::from_value(value).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }
}

/// Sets the field at a dotted path. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let mut cur = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), parsed);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| Error::Config(format!("override {assignment:?}: {key:?} is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("override {assignment:?}: index {idx} out of range ({len})")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "override {assignment:?}: {} is not an object",
                    keys[..i].join(".")
                )))
            }
        };
    }
    unreachable!("loop returns on the last key")
}
