use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Arity;
use crate::error::{Error, Result};

pub const MASK_MARKER: &str = "[MASK]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    /// Zero-based document slot.
    Slot(usize),
    Mask,
}

/// A prompt pattern such as `"{x} The price is [MASK]"` or
/// `"{x1} and {x2} are [MASK] product"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    segments: Vec<Segment>,
    arity: Arity,
}

impl PromptTemplate {
    pub fn parse(spec: &str) -> Result<Self> {
        parse_template(spec)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn mask_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Mask)).count()
    }

    /// Whitespace-separated words of the literal text.
    pub fn literal_words(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().flat_map(|s| match s {
            Segment::Literal(t) => t.split_whitespace().collect::<Vec<_>>(),
            _ => Vec::new(),
        })
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for PromptTemplate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for PromptTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_template(&s).map_err(serde::de::Error::custom)
    }
}

/// Splits a template into literal text, `{x}` / `{x1}` / `{x2}` slots and a
/// single `[MASK]`.
pub fn parse_template(spec: &str) -> Result<PromptTemplate> {
    let bad = |reason: &str| Error::BadSlots { template: spec.to_string(), reason: reason.to_string() };
    if spec.is_empty() {
        return Err(bad("empty template"));
    }
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut slot_names: Vec<&str> = Vec::new();
    let mut rest = spec;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix(MASK_MARKER) {
            flush(&mut literal, &mut segments);
            segments.push(Segment::Mask);
            rest = after;
        } else if rest.starts_with('{') {
            let close = rest.find('}').ok_or_else(|| bad("unclosed '{'"))?;
            let name = &rest[1..close];
            if !matches!(name, "x" | "x1" | "x2") {
                return Err(bad(&format!("unknown slot {{{name}}}")));
            }
            if slot_names.contains(&name) {
                return Err(bad(&format!("duplicate slot {{{name}}}")));
            }
            slot_names.push(name);
            flush(&mut literal, &mut segments);
            segments.push(Segment::Slot(match name {
                "x2" => 1,
                _ => 0,
            }));
            rest = &rest[close + 1..];
        } else {
            let ch = rest.chars().next().unwrap();
            literal.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
    }
    flush(&mut literal, &mut segments);

    let masks = segments.iter().filter(|s| matches!(s, Segment::Mask)).count();
    if masks == 0 {
        return Err(Error::NoMask(spec.to_string()));
    }
    if masks > 1 {
        return Err(Error::MultipleMasks(spec.to_string()));
    }
    slot_names.sort_unstable();
    let arity = match slot_names.as_slice() {
        ["x"] => Arity::Single,
        ["x1", "x2"] => Arity::Pair,
        [] => return Err(bad("no document slot")),
        _ => return Err(bad("slots must be exactly {x} or exactly {x1} and {x2}")),
    };
    Ok(PromptTemplate { source: spec.to_string(), segments, arity })
}

fn flush(literal: &mut String, segments: &mut Vec<Segment>) {
    if !literal.is_empty() {
        segments.push(Segment::Literal(std::mem::take(literal)));
    }
}

/// Non-empty list of templates sharing one arity.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptPool {
    templates: Vec<PromptTemplate>,
}

impl PromptPool {
    pub fn new(templates: Vec<PromptTemplate>) -> Result<Self> {
        let first = templates.first().ok_or(Error::NotEnoughCandidates { k: 1, available: 0 })?;
        for t in &templates {
            if t.arity() != first.arity() {
                return Err(Error::ArityMismatch { expected: first.arity().count(), actual: t.arity().count() });
            }
        }
        Ok(PromptPool { templates })
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn arity(&self) -> Arity {
        self.templates[0].arity()
    }

    pub fn get(&self, index: usize) -> Option<&PromptTemplate> {
        self.templates.get(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_document_template() {
        let t = parse_template("{x} The price is [MASK]").unwrap();
        assert_eq!(t.arity(), Arity::Single);
        assert_eq!(t.segments(), &[Segment::Slot(0), Segment::Literal(" The price is ".into()), Segment::Mask]);
    }

    #[test]
    fn pairwise_template() {
        let t = parse_template("{x1} and {x2} are [MASK] product").unwrap();
        assert_eq!(t.arity(), Arity::Pair);
        assert_eq!(t.mask_count(), 1);
        assert_eq!(t.literal_words().collect::<Vec<_>>(), ["and", "are", "product"]);
        // slot order follows the text, not the slot name
        let t = parse_template("{x2} vs {x1}: [MASK]").unwrap();
        assert_eq!(t.segments()[0], Segment::Slot(1));
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(parse_template("{x} has no mask"), Err(Error::NoMask(_))));
        assert!(matches!(parse_template("{x} [MASK] [MASK]"), Err(Error::MultipleMasks(_))));
        assert!(matches!(parse_template("[MASK] only"), Err(Error::BadSlots { .. })));
        assert!(matches!(parse_template("{x} {x} [MASK]"), Err(Error::BadSlots { .. })));
        assert!(matches!(parse_template("{x} {x1} [MASK]"), Err(Error::BadSlots { .. })));
        assert!(matches!(parse_template("{x1} [MASK]"), Err(Error::BadSlots { .. })));
        assert!(matches!(parse_template("{y} [MASK]"), Err(Error::BadSlots { .. })));
        assert!(parse_template("").is_err());
    }

    #[test]
    fn pool_requires_homogeneous_arity() {
        let a = parse_template("{x} [MASK]").unwrap();
        let b = parse_template("{x1} {x2} [MASK]").unwrap();
        assert!(PromptPool::new(vec![a.clone(), b]).is_err());
        assert!(PromptPool::new(vec![]).is_err());
        assert_eq!(PromptPool::new(vec![a]).unwrap().len(), 1);
    }
}
