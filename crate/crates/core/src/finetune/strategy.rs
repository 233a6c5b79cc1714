use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Arity, Dataset, Target};
use crate::encoder::Pooling;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::templating::{sample_index, truncate_documents, CompiledTemplate, EncodedInput, PromptPool, PromptTemplate};
use crate::tokenizer::{TokenSeq, Vocab, MASK, SEP};

/// Strategy name without its templates; used in configs and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    PftCls,
    PftAvg,
    NpPrefix,
    NpSuffix,
    Fiter,
    Dynamar,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::PftCls,
        StrategyKind::PftAvg,
        StrategyKind::NpPrefix,
        StrategyKind::NpSuffix,
        StrategyKind::Fiter,
        StrategyKind::Dynamar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::PftCls => "pft_cls",
            StrategyKind::PftAvg => "pft_avg",
            StrategyKind::NpPrefix => "np_prefix",
            StrategyKind::NpSuffix => "np_suffix",
            StrategyKind::Fiter => "fiter",
            StrategyKind::Dynamar => "dynamar",
        }
    }

    /// Row label in Markdown tables.
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::PftCls => "PFt-CLS",
            StrategyKind::PftAvg => "PFt-Avg",
            StrategyKind::NpPrefix => "NP-Prefix",
            StrategyKind::NpSuffix => "NP-Suffix",
            StrategyKind::Fiter => "FiTeR",
            StrategyKind::Dynamar => "DPMR",
        }
    }

    pub fn pooling(self) -> Pooling {
        match self {
            StrategyKind::PftCls => Pooling::Cls,
            StrategyKind::PftAvg => Pooling::Mean,
            _ => Pooling::Mask,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    PftCls,
    PftAvg,
    NpPrefix,
    NpSuffix,
    Fiter(PromptTemplate),
    Dynamar { pool: PromptPool, inference_template: Option<usize> },
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::PftCls => StrategyKind::PftCls,
            Strategy::PftAvg => StrategyKind::PftAvg,
            Strategy::NpPrefix => StrategyKind::NpPrefix,
            Strategy::NpSuffix => StrategyKind::NpSuffix,
            Strategy::Fiter(_) => StrategyKind::Fiter,
            Strategy::Dynamar { .. } => StrategyKind::Dynamar,
        }
    }

    pub fn pooling(&self) -> Pooling {
        self.kind().pooling()
    }

    pub fn dynamar(pool: PromptPool) -> Self {
        Strategy::Dynamar { pool, inference_template: None }
    }
}

/// Which template a DYNAMAR input uses: a fresh sample while training, pool
/// index 0 for validation during training, the selected one at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Validate,
    Infer,
}

/// Documents already tokenized, plus the target.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedExample {
    pub docs: Vec<TokenSeq>,
    pub target: Target,
}

pub fn tokenize_dataset(dataset: &Dataset, vocab: &Vocab) -> Vec<TokenizedExample> {
    dataset
        .examples
        .iter()
        .map(|ex| TokenizedExample { docs: ex.docs.iter().map(|d| vocab.encode(d)).collect(), target: ex.target })
        .collect()
}

/// A strategy with its templates compiled against one vocabulary.
#[derive(Clone, Debug)]
pub struct StrategyEncoder {
    kind: StrategyKind,
    templates: Vec<CompiledTemplate>,
    arity: Option<Arity>,
    inference_template: Option<usize>,
    max_len: usize,
}

impl StrategyEncoder {
    pub fn new(strategy: &Strategy, vocab: &Vocab, max_len: usize) -> Self {
        let (templates, arity, inference_template) = match strategy {
            Strategy::Fiter(t) => (vec![CompiledTemplate::new(t, vocab)], Some(t.arity()), Some(0)),
            Strategy::Dynamar { pool, inference_template } => (
                pool.templates().iter().map(|t| CompiledTemplate::new(t, vocab)).collect(),
                Some(pool.arity()),
                *inference_template,
            ),
            _ => (Vec::new(), None, None),
        };
        StrategyEncoder { kind: strategy.kind(), templates, arity, inference_template, max_len }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn pool_size(&self) -> usize {
        self.templates.len()
    }

    pub fn set_inference_template(&mut self, index: usize) -> Result<()> {
        if index >= self.templates.len() {
            return Err(Error::InvalidArgument(format!(
                "template {index} is outside a pool of {}",
                self.templates.len()
            )));
        }
        self.inference_template = Some(index);
        Ok(())
    }

    pub fn inference_template(&self) -> Option<usize> {
        self.inference_template
    }

    /// Renders with one specific template of the pool, whatever the phase.
    pub fn encode_with_template(&self, docs: &[TokenSeq], index: usize) -> Result<EncodedInput> {
        self.templates[index].render(docs, self.max_len)
    }

    pub fn encode(&self, docs: &[TokenSeq], phase: Phase, rng: &mut Rng) -> Result<EncodedInput> {
        if let Some(arity) = self.arity {
            if docs.len() != arity.count() {
                return Err(Error::ArityMismatch { expected: arity.count(), actual: docs.len() });
            }
        }
        match self.kind {
            StrategyKind::PftCls | StrategyKind::PftAvg => self.promptless(docs, None),
            StrategyKind::NpPrefix => self.promptless(docs, Some(true)),
            StrategyKind::NpSuffix => self.promptless(docs, Some(false)),
            StrategyKind::Fiter => self.encode_with_template(docs, 0),
            StrategyKind::Dynamar => {
                let index = match phase {
                    Phase::Train => sample_index(self.templates.len(), rng),
                    Phase::Validate => 0,
                    Phase::Infer => self.inference_template.ok_or(Error::InferenceTemplateUnset)?,
                };
                self.encode_with_template(docs, index)
            }
        }
    }

    /// `[CLS] d1 [SEP] d2 [SEP]`, with an optional `[MASK]` right after
    /// `[CLS]` (prefix) or right before the final `[SEP]` (suffix).
    fn promptless(&self, docs: &[TokenSeq], mask_first: Option<bool>) -> Result<EncodedInput> {
        if docs.is_empty() || docs.len() > 2 {
            return Err(Error::ArityMismatch { expected: 1, actual: docs.len() });
        }
        let overhead = 2 + (docs.len() - 1) + usize::from(mask_first.is_some());
        if overhead > self.max_len {
            return Err(Error::TemplateTooLong { needed: overhead, max_len: self.max_len });
        }
        let docs = truncate_documents(docs, self.max_len - overhead);
        let mut body = Vec::with_capacity(self.max_len);
        if mask_first == Some(true) {
            body.push(MASK);
        }
        for (i, d) in docs.iter().enumerate() {
            if i > 0 {
                body.push(SEP);
            }
            body.extend_from_slice(d);
        }
        if mask_first == Some(false) {
            body.push(MASK);
        }
        Ok(EncodedInput::from_body(&body, self.max_len))
    }
}

/// One-off encoding of a raw example; compiles the strategy's templates on
/// every call, so loops should hold a [`StrategyEncoder`] instead.
pub fn encode_for_strategy(
    strategy: &Strategy,
    docs: &[&str],
    vocab: &Vocab,
    max_len: usize,
    phase: Phase,
    rng: &mut Rng,
) -> Result<EncodedInput> {
    let tokens: Vec<TokenSeq> = docs.iter().map(|d| vocab.encode(d)).collect();
    StrategyEncoder::new(strategy, vocab, max_len).encode(&tokens, phase, rng)
}
