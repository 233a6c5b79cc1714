use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Arity, GeneratorSpec, TaskKind};
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::finetune::{PretrainConfig, StrategyKind, TrainingSchedule};
use crate::metrics::MetricKind;
use crate::templating::{parse_template, PromptTemplate, ScorerKind};
use crate::tokenizer::DEFAULT_VOCAB_SIZE;

/// Template candidate file: `{"task": ..., "arity": 1|2, "candidates": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateFile {
    pub task: String,
    pub arity: Arity,
    pub candidates: Vec<String>,
}

impl TemplateFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn parse(&self) -> Result<Vec<PromptTemplate>> {
        let templates: Vec<PromptTemplate> =
            self.candidates.iter().map(|c| parse_template(c)).collect::<Result<_>>()?;
        if let Some(t) = templates.iter().find(|t| t.arity() != self.arity) {
            return Err(Error::ArityMismatch { expected: self.arity.count(), actual: t.arity().count() });
        }
        Ok(templates)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    FewShot,
    DataRich,
}

/// How the per-seed training and validation sets are drawn from the
/// train and validation splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Per class, for classification tasks.
    KPerClass(usize),
    Fraction(f64),
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub metric: MetricKind,
    /// Synthetic source; alternative to the JSONL paths.
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    /// One JSONL file, split by `split`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Pre-split JSONL files.
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub val: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Required with JSONL sources.
    #[serde(default)]
    pub task_kind: Option<TaskKind>,
    #[serde(default)]
    pub arity: Option<Arity>,
    /// Train and validation fractions; the test split takes the rest.
    #[serde(default = "default_split")]
    pub split: (f64, f64),
    #[serde(default = "default_sampling")]
    pub train_sampling: Sampling,
    #[serde(default = "default_sampling")]
    pub val_sampling: Sampling,
    /// Caps the test split.
    #[serde(default)]
    pub max_test: Option<usize>,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub candidates: Option<Vec<String>>,
}

fn default_split() -> (f64, f64) {
    (0.6, 0.2)
}

fn default_sampling() -> Sampling {
    Sampling::All
}

/// Fields overriding the regime's default schedule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub max_steps: Option<usize>,
    pub validate_every: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_max_len")]
    pub max_len: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
}

fn d_layers() -> usize {
    ModelConfig::default().layers
}
fn d_dim() -> usize {
    ModelConfig::default().dim
}
fn d_heads() -> usize {
    ModelConfig::default().heads
}
fn d_max_len() -> usize {
    ModelConfig::default().max_len
}
fn d_dropout() -> f64 {
    ModelConfig::default().dropout
}

impl Default for ModelOverrides {
    fn default() -> Self {
        ModelOverrides {
            layers: d_layers(),
            dim: d_dim(),
            heads: d_heads(),
            max_len: d_max_len(),
            dropout: d_dropout(),
        }
    }
}

impl ModelOverrides {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            dim: self.dim,
            heads: self.heads,
            max_len: self.max_len,
            vocab_size,
            dropout: self.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainOverrides {
    #[serde(default = "p_steps")]
    pub steps: usize,
    #[serde(default = "p_batch")]
    pub batch_size: usize,
    #[serde(default = "p_lr")]
    pub learning_rate: f64,
    #[serde(default = "p_mask")]
    pub mask_rate: f64,
}

fn p_steps() -> usize {
    PretrainConfig::default().steps
}
fn p_batch() -> usize {
    PretrainConfig::default().batch_size
}
fn p_lr() -> f64 {
    PretrainConfig::default().learning_rate
}
fn p_mask() -> f64 {
    PretrainConfig::default().mask_rate
}

impl Default for PretrainOverrides {
    fn default() -> Self {
        PretrainOverrides { steps: p_steps(), batch_size: p_batch(), learning_rate: p_lr(), mask_rate: p_mask() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskConfig>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default)]
    pub scorer: ScorerKind,
    #[serde(default)]
    pub min_dissimilarity: Option<f64>,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    #[serde(default)]
    pub pretrain: PretrainOverrides,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Extra unlabeled documents for the tokenizer and pre-training.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub save_checkpoints: bool,
}

fn default_strategies() -> Vec<StrategyKind> {
    StrategyKind::ALL.to_vec()
}
fn default_pool_size() -> usize {
    5
}
fn default_vocab_size() -> usize {
    DEFAULT_VOCAB_SIZE
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.corpus);
        for t in &mut self.tasks {
            for p in [&mut t.data, &mut t.train, &mut t.val, &mut t.test, &mut t.templates] {
                fix(p);
            }
        }
    }

    pub fn schedule(&self, seed: u64) -> TrainingSchedule {
        let base = match self.regime {
            Regime::FewShot => TrainingSchedule::few_shot(seed),
            Regime::DataRich => TrainingSchedule::data_rich(seed),
        };
        let o = &self.schedule;
        TrainingSchedule {
            max_steps: o.max_steps.unwrap_or(base.max_steps),
            validate_every: o.validate_every.unwrap_or(base.validate_every),
            patience: o.patience.unwrap_or(base.patience),
            batch_size: o.batch_size.unwrap_or(base.batch_size),
            learning_rate: o.learning_rate.unwrap_or(base.learning_rate),
            seed,
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            steps: p.steps,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            mask_rate: p.mask_rate,
            seed,
        }
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.tasks.is_empty() {
            return fail("at least one task is required".into());
        }
        if self.strategies.is_empty() {
            return fail("at least one strategy is required".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.pool_size == 0 {
            return fail("pool_size must be positive".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return fail(format!("duplicate task name {:?}", t.name));
            }
            let split_files = t.train.is_some() || t.val.is_some() || t.test.is_some();
            let sources = [t.generator.is_some(), t.data.is_some(), split_files].iter().filter(|&&b| b).count();
            if sources != 1 {
                return fail(format!("task {:?} needs exactly one of generator, data, or train/val/test", t.name));
            }
            if split_files && (t.train.is_none() || t.val.is_none() || t.test.is_none()) {
                return fail(format!("task {:?} needs all of train, val and test", t.name));
            }
            if t.generator.is_none() && (t.task_kind.is_none() || t.arity.is_none()) {
                return fail(format!("task {:?} reads JSONL and needs task_kind and arity", t.name));
            }
            let (a, b) = t.split;
            if !(a > 0.0 && b > 0.0 && a + b < 1.0) {
                return fail(format!("task {:?} split {:?} must leave room for all three parts", t.name, t.split));
            }
            let needs_templates =
                self.strategies.iter().any(|s| matches!(s, StrategyKind::Fiter | StrategyKind::Dynamar));
            if needs_templates && t.templates.is_none() && t.candidates.is_none() {
                return fail(format!("task {:?} needs templates or candidates for prompt strategies", t.name));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return fail(format!("strategy {dup} is listed twice"));
        }
        self.schedule(0).validate()?;
        self.model.with_vocab(self.vocab_size).validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
