use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenSeq, Vocab, CLS, MASK, PAD, SEP};

use super::template::{PromptTemplate, Segment};

/// Encoder-ready sequence: `[CLS] ... [SEP]` followed by padding up to
/// `max_len`. The `[CLS]` token is always at position 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: TokenSeq,
    pub mask_index: Option<usize>,
    pub attention_length: usize,
}

impl EncodedInput {
    pub const CLS_INDEX: usize = 0;

    /// Builds `[CLS] body [SEP] [PAD]*`. `body` must already fit.
    pub fn from_body(body: &[TokenId], max_len: usize) -> Self {
        debug_assert!(body.len() + 2 <= max_len);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend_from_slice(body);
        ids.push(SEP);
        let attention_length = ids.len();
        ids.resize(max_len, PAD);
        let mask_index = ids[..attention_length].iter().position(|&t| t == MASK);
        EncodedInput { ids, mask_index, attention_length }
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn valid_ids(&self) -> &[TokenId] {
        &self.ids[..self.attention_length]
    }

    /// Checks the layout invariants; returns a description of the first
    /// violation.
    pub fn check(&self, max_len: usize) -> std::result::Result<(), String> {
        if self.ids.len() != max_len {
            return Err(format!("length {} != max_len {max_len}", self.ids.len()));
        }
        if self.attention_length < 2 || self.attention_length > max_len {
            return Err(format!("attention_length {} out of range", self.attention_length));
        }
        if self.ids[0] != CLS {
            return Err("first token is not [CLS]".into());
        }
        let valid = self.valid_ids();
        if valid[..valid.len() - 1].contains(&PAD) || self.ids[self.attention_length..].iter().any(|&t| t != PAD) {
            return Err("PAD is not a pure suffix".into());
        }
        if valid.last() != Some(&SEP) {
            return Err("sequence does not end with [SEP] before padding".into());
        }
        let masks: Vec<usize> = valid.iter().enumerate().filter(|(_, &t)| t == MASK).map(|(i, _)| i).collect();
        match (self.mask_index, masks.as_slice()) {
            (None, []) => Ok(()),
            (Some(m), [p]) if m == *p => Ok(()),
            _ => Err(format!("mask_index {:?} inconsistent with MASK positions {masks:?}", self.mask_index)),
        }
    }
}

/// Per-document token counts after fitting `lengths` into `budget`: shares
/// proportional to the original lengths, rounded by largest remainder (ties
/// to the earlier document).
pub fn truncation_lengths(lengths: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = lengths.iter().sum();
    if total <= budget {
        return lengths.to_vec();
    }
    let mut out: Vec<usize> = lengths.iter().map(|&l| budget * l / total).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((budget * lengths[i]) % total));
    for &i in order.iter().take(budget - assigned) {
        out[i] += 1;
    }
    out
}

/// Cuts each document at its tail so the total fits `budget`.
pub fn truncate_documents(docs: &[TokenSeq], budget: usize) -> Vec<TokenSeq> {
    let lengths: Vec<usize> = docs.iter().map(Vec::len).collect();
    truncation_lengths(&lengths, budget).into_iter().zip(docs).map(|(n, d)| d[..n].to_vec()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Part {
    Tokens(TokenSeq),
    Slot(usize),
    Mask,
}

/// A template with its literal text already tokenized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompiledTemplate {
    parts: Vec<Part>,
    arity: usize,
    literal_len: usize,
}

impl CompiledTemplate {
    pub fn new(template: &PromptTemplate, vocab: &Vocab) -> Self {
        let parts: Vec<Part> = template
            .segments()
            .iter()
            .map(|s| match s {
                Segment::Literal(text) => Part::Tokens(vocab.encode(text)),
                Segment::Slot(i) => Part::Slot(*i),
                Segment::Mask => Part::Mask,
            })
            .collect();
        let literal_len = parts
            .iter()
            .map(|p| match p {
                Part::Tokens(t) => t.len(),
                _ => 0,
            })
            .sum();
        CompiledTemplate { parts, arity: template.arity().count(), literal_len }
    }

    /// Tokens taken by `[CLS]`, `[SEP]`, `[MASK]` and the literal text.
    pub fn overhead(&self) -> usize {
        self.literal_len + 3
    }

    pub fn render(&self, docs: &[TokenSeq], max_len: usize) -> Result<EncodedInput> {
        if docs.len() != self.arity {
            return Err(Error::ArityMismatch { expected: self.arity, actual: docs.len() });
        }
        if self.overhead() > max_len {
            return Err(Error::TemplateTooLong { needed: self.overhead(), max_len });
        }
        let docs = truncate_documents(docs, max_len - self.overhead());
        let mut body = Vec::with_capacity(max_len);
        for part in &self.parts {
            match part {
                Part::Tokens(t) => body.extend_from_slice(t),
                Part::Slot(i) => body.extend_from_slice(&docs[*i]),
                Part::Mask => body.push(MASK),
            }
        }
        Ok(EncodedInput::from_body(&body, max_len))
    }
}

pub fn render(template: &PromptTemplate, docs: &[TokenSeq], max_len: usize, vocab: &Vocab) -> Result<EncodedInput> {
    CompiledTemplate::new(template, vocab).render(docs, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templating::parse_template;
    use crate::tokenizer::train_bpe;

    fn vocab() -> Vocab {
        train_bpe(&["red mug", "The price is low", "and are the same product", "x y z"], 60).unwrap()
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncation_lengths(&[10], 20), [10]);
        assert_eq!(truncation_lengths(&[30, 10], 20), [15, 5]);
        assert_eq!(truncation_lengths(&[7, 7], 0), [0, 0]);
        // 3 * 5/7 = 2.14, 3 * 2/7 = 0.86: remainder goes to the second
        assert_eq!(truncation_lengths(&[5, 2], 3), [2, 1]);
        // equal remainders: the earlier document wins
        assert_eq!(truncation_lengths(&[3, 3], 5), [3, 2]);
    }

    #[test]
    fn truncate_keeps_heads() {
        let out = truncate_documents(&[vec![1, 2, 3, 4], vec![5, 6, 7, 8]], 4);
        assert_eq!(out, [vec![1, 2], vec![5, 6]]);
    }

    #[test]
    fn renders_price_template() {
        let v = vocab();
        let t = parse_template("{x} The price is [MASK]").unwrap();
        let doc = v.encode("red mug");
        let lit = v.encode(" The price is ");
        let enc = render(&t, &[doc.clone()], 32, &v).unwrap();
        let mut expected = vec![CLS];
        expected.extend(&doc);
        expected.extend(&lit);
        expected.push(MASK);
        expected.push(SEP);
        let n = expected.len();
        expected.resize(32, PAD);
        assert_eq!(enc.ids, expected);
        assert_eq!(enc.mask_index, Some(n - 2));
        assert_eq!(enc.attention_length, n);
        enc.check(32).unwrap();
    }

    #[test]
    fn pairwise_with_empty_docs() {
        let v = vocab();
        let t = parse_template("{x1} and {x2} are [MASK] product").unwrap();
        let enc = render(&t, &[vec![], vec![]], 32, &v).unwrap();
        enc.check(32).unwrap();
        assert_eq!(enc.valid_ids().iter().filter(|&&i| i == MASK).count(), 1);
        let lit: usize = [" and ", " are ", " product"].iter().map(|s| v.encode(s).len()).sum();
        assert_eq!(enc.attention_length, lit + 3);
    }

    #[test]
    fn errors() {
        let v = vocab();
        let t = parse_template("{x} The price is [MASK]").unwrap();
        assert!(matches!(render(&t, &[vec![], vec![]], 32, &v), Err(Error::ArityMismatch { .. })));
        assert!(matches!(render(&t, &[vec![]], 4, &v), Err(Error::TemplateTooLong { .. })));
    }

    #[test]
    fn long_document_is_truncated_to_fit() {
        let v = vocab();
        let t = parse_template("{x} The price is [MASK]").unwrap();
        let doc: TokenSeq = (0..100).map(|_| v.id("x").unwrap()).collect();
        let enc = render(&t, &[doc], 16, &v).unwrap();
        enc.check(16).unwrap();
        assert_eq!(enc.attention_length, 16);
    }
}
