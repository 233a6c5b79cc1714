use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::encoder::{extract_representation, Model, Pooling};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenSeq, Vocab};

use super::render::render;
use super::template::PromptTemplate;

/// Symmetric score in `[0, 1]`; 0 means interchangeable templates.
pub trait Dissimilarity {
    fn score(&self, a: &PromptTemplate, b: &PromptTemplate) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Jaccard,
    Embedding,
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jaccard" => Ok(ScorerKind::Jaccard),
            "embedding" => Ok(ScorerKind::Embedding),
            other => Err(Error::InvalidArgument(format!("unknown scorer {other:?} (expected jaccard or embedding)"))),
        }
    }
}

fn check_arity(a: &PromptTemplate, b: &PromptTemplate) -> Result<()> {
    if a.arity() != b.arity() {
        return Err(Error::ArityMismatch { expected: a.arity().count(), actual: b.arity().count() });
    }
    Ok(())
}

/// `1 - |A ∩ B| / |A ∪ B|` over the sets of literal words. Two templates
/// without any literal words score 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct TokenJaccard;

impl Dissimilarity for TokenJaccard {
    fn score(&self, a: &PromptTemplate, b: &PromptTemplate) -> Result<f64> {
        check_arity(a, b)?;
        let sa: BTreeSet<&str> = a.literal_words().collect();
        let sb: BTreeSet<&str> = b.literal_words().collect();
        let union = sa.union(&sb).count();
        if union == 0 {
            return Ok(0.0);
        }
        Ok(1.0 - sa.intersection(&sb).count() as f64 / union as f64)
    }
}

/// `(1 - cos) / 2` between mean-pooled final hidden states of the two
/// templates rendered around a fixed probe.
pub struct EmbeddingCosine<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocab,
    pub probe: Vec<TokenSeq>,
}

impl<'a> EmbeddingCosine<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocab, probe_docs: &[&str]) -> Self {
        EmbeddingCosine { model, vocab, probe: probe_docs.iter().map(|d| vocab.encode(d)).collect() }
    }

    pub fn embed(&self, t: &PromptTemplate) -> Result<Vec<f64>> {
        if t.arity().count() != self.probe.len() {
            return Err(Error::ArityMismatch { expected: t.arity().count(), actual: self.probe.len() });
        }
        let x = render(t, &self.probe, self.model.config().max_len, self.vocab)?;
        let h = self.model.forward_eval(std::slice::from_ref(&x))?;
        extract_representation(&h, &[x], Pooling::Mean)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

impl Dissimilarity for EmbeddingCosine<'_> {
    fn score(&self, a: &PromptTemplate, b: &PromptTemplate) -> Result<f64> {
        check_arity(a, b)?;
        let ra = render(a, &self.probe, self.model.config().max_len, self.vocab)?;
        let rb = render(b, &self.probe, self.model.config().max_len, self.vocab)?;
        if ra == rb {
            return Ok(0.0);
        }
        let (ea, eb) = (self.embed(a)?, self.embed(b)?);
        Ok(((1.0 - cosine(&ea, &eb)) / 2.0).clamp(0.0, 1.0))
    }
}
