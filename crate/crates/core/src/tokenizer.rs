//! Character-level byte-pair-encoding vocabulary.
//!
//! The base alphabet is the set of characters seen in the training corpus.
//! Whitespace is an ordinary symbol, so merges may span word boundaries.
//! Ids `0..5` are reserved for the special tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

pub const PAD: TokenId = 0;
pub const CLS: TokenId = 1;
pub const SEP: TokenId = 2;
pub const MASK: TokenId = 3;
pub const UNK: TokenId = 4;

pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];
const SPECIAL_KEYS: [&str; NUM_SPECIALS] = ["PAD", "CLS", "SEP", "MASK", "UNK"];

pub const DEFAULT_VOCAB_SIZE: usize = 2048;

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

#[derive(Clone, Debug)]
pub struct Vocab {
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    /// `(left, right, output)` per merge, in training order.
    merge_ids: Vec<(TokenId, TokenId, TokenId)>,
    /// Rule indices per pair, ascending.
    rules_by_pair: HashMap<(TokenId, TokenId), Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    merges: Vec<(String, String)>,
    tokens: BTreeMap<String, TokenId>,
    specials: BTreeMap<String, TokenId>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.tokens == other.tokens
    }
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
        }
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*name) {
                return Err(Error::InvalidArgument(format!("special {name} must have id {i}")));
            }
        }
        let mut merge_ids = Vec::with_capacity(merges.len());
        let mut rules_by_pair: HashMap<(TokenId, TokenId), Vec<usize>> = HashMap::new();
        for (rule, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                token_to_id
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("merge refers to unknown token {s:?}")))
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let out = lookup(&format!("{l}{r}"))?;
            if is_special(out) || is_special(li) || is_special(ri) {
                return Err(Error::InvalidArgument(format!("merge ({l:?}, {r:?}) touches a special token")));
            }
            merge_ids.push((li, ri, out));
            rules_by_pair.entry((li, ri)).or_default().push(rule);
        }
        Ok(Vocab { merges, tokens, token_to_id, merge_ids, rules_by_pair })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    /// Applies the merge rules in training order. Characters outside the
    /// training alphabet become `UNK` and never take part in a merge.
    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut seq: Vec<TokenId> = text
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.token_to_id.get(c.encode_utf8(&mut buf) as &str).copied().unwrap_or(UNK)
            })
            .collect();
        // Rules without an occurrence are no-ops, so jump straight to the
        // lowest-ranked rule (after the last one applied) that has one.
        let mut last: Option<usize> = None;
        loop {
            let mut next: Option<usize> = None;
            for w in seq.windows(2) {
                if let Some(rules) = self.rules_by_pair.get(&(w[0], w[1])) {
                    let start = last.map_or(0, |l| rules.partition_point(|&r| r <= l));
                    if let Some(&r) = rules.get(start) {
                        next = Some(next.map_or(r, |n| n.min(r)));
                    }
                }
            }
            let Some(rule) = next else { break };
            let (l, r, out) = self.merge_ids[rule];
            merge_pair(&mut seq, l, r, out);
            last = Some(rule);
        }
        seq
    }

    pub fn decode(&self, seq: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in seq {
            out.push_str(self.token(id).ok_or(Error::UnknownId(id))?);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            merges: self.merges.clone(),
            tokens: self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect(),
            specials: SPECIAL_KEYS.iter().enumerate().map(|(i, k)| (k.to_string(), i as TokenId)).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        for (i, key) in SPECIAL_KEYS.iter().enumerate() {
            if file.specials.get(*key) != Some(&(i as TokenId)) {
                return Err(Error::InvalidArgument(format!("special {key} must have id {i}")));
            }
        }
        let n = file.tokens.len();
        let mut tokens = vec![None; n];
        for (tok, &id) in &file.tokens {
            match tokens.get_mut(id as usize) {
                Some(slot @ None) => *slot = Some(tok.clone()),
                _ => return Err(Error::InvalidArgument(format!("token ids are not dense 0..{n}"))),
            }
        }
        let tokens = tokens.into_iter().map(Option::unwrap).collect();
        Self::from_parts(tokens, file.merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Replaces non-overlapping `(l, r)` occurrences left to right.
fn merge_pair(seq: &mut Vec<TokenId>, l: TokenId, r: TokenId, out: TokenId) {
    let mut write = 0;
    let mut read = 0;
    while read < seq.len() {
        if read + 1 < seq.len() && seq[read] == l && seq[read + 1] == r {
            seq[write] = out;
            read += 2;
        } else {
            seq[write] = seq[read];
            read += 1;
        }
        write += 1;
    }
    seq.truncate(write);
}

/// Greedy BPE: repeatedly merge the most frequent adjacent pair, breaking
/// ties by the lexicographic order of `(left, right)`. Stops at the target
/// size or when no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_vocab_size: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let alphabet: BTreeSet<char> = corpus.iter().flat_map(|d| d.as_ref().chars()).collect();
    let minimum = NUM_SPECIALS + alphabet.len();
    if target_vocab_size < minimum {
        return Err(Error::VocabTooSmall { target: target_vocab_size, minimum });
    }

    let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    let mut token_to_id: HashMap<String, TokenId> =
        tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();

    // Identical documents are counted once, weighted by multiplicity.
    let mut doc_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in corpus {
        *doc_counts.entry(d.as_ref()).or_default() += 1;
    }
    let mut seqs: Vec<(Vec<TokenId>, usize)> =
        doc_counts.into_iter().map(|(d, n)| (d.chars().map(|c| token_to_id[&c.to_string()]).collect(), n)).collect();

    let mut merges = Vec::new();
    while tokens.len() < target_vocab_size {
        let mut counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
        for (seq, n) in &seqs {
            for w in seq.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .filter(|&((l, r), _)| {
                let merged = format!("{}{}", tokens[l as usize], tokens[r as usize]);
                !SPECIAL_NAMES.contains(&merged.as_str())
            })
            .max_by(|&((al, ar), ac), &((bl, br), bc)| {
                ac.cmp(&bc).then_with(|| {
                    // smaller pair wins a tie, so it must compare as "greater"
                    (&tokens[bl as usize], &tokens[br as usize]).cmp(&(&tokens[al as usize], &tokens[ar as usize]))
                })
            });
        let Some(((l, r), _)) = best else { break };
        let merged = format!("{}{}", tokens[l as usize], tokens[r as usize]);
        let out = match token_to_id.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as TokenId;
                tokens.push(merged.clone());
                token_to_id.insert(merged, id);
                id
            }
        };
        merges.push((tokens[l as usize].clone(), tokens[r as usize].clone()));
        for (seq, _) in &mut seqs {
            merge_pair(seq, l, r, out);
        }
    }
    Vocab::from_parts(tokens, merges)
}
