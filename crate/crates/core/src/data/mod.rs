//! Datasets: JSONL ingestion, splitting, few-shot sampling and synthetic
//! task generators.

mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use synthetic::{gen_synthetic, GeneratorSpec, SyntheticTask, PRICE_SCALE};

/// Number of documents per example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Arity {
    Single,
    Pair,
}

impl Arity {
    pub fn count(self) -> usize {
        match self {
            Arity::Single => 1,
            Arity::Pair => 2,
        }
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            1 => Some(Arity::Single),
            2 => Some(Arity::Pair),
            _ => None,
        }
    }
}

impl TryFrom<u8> for Arity {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        Arity::from_count(n as usize).ok_or_else(|| format!("arity must be 1 or 2, got {n}"))
    }
}

impl From<Arity> for u8 {
    fn from(a: Arity) -> u8 {
        a.count() as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass(usize),
    Regression,
}

impl TaskKind {
    pub fn num_classes(self) -> Option<usize> {
        match self {
            TaskKind::Binary => Some(2),
            TaskKind::Multiclass(k) => Some(k),
            TaskKind::Regression => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Binary => f.write_str("binary"),
            TaskKind::Multiclass(k) => write!(f, "multiclass({k})"),
            TaskKind::Regression => f.write_str("regression"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Label(usize),
    Value(f64),
}

impl Target {
    pub fn label(self) -> Option<usize> {
        match self {
            Target::Label(l) => Some(l),
            Target::Value(_) => None,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Target::Value(v) => Some(v),
            Target::Label(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub docs: Vec<String>,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub task_kind: TaskKind,
    pub arity: Arity,
}

impl Dataset {
    pub fn new(task_kind: TaskKind, arity: Arity) -> Self {
        Dataset { examples: Vec::new(), task_kind, arity }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn with_examples(&self, examples: Vec<Example>) -> Self {
        Dataset { examples, task_kind: self.task_kind, arity: self.arity }
    }

    /// Contiguous train/validation/test split; the test part takes the rest.
    pub fn split(&self, train_frac: f64, val_frac: f64) -> Result<(Dataset, Dataset, Dataset)> {
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
            return Err(Error::InvalidArgument(format!("bad split fractions train={train_frac} val={val_frac}")));
        }
        let n = self.len();
        let n_train = (train_frac * n as f64).round() as usize;
        let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
        let (train, rest) = self.examples.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        Ok((self.with_examples(train.to_vec()), self.with_examples(val.to_vec()), self.with_examples(test.to_vec())))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            let mut obj = Map::new();
            obj.insert("id".into(), json!(ex.id));
            match self.arity {
                Arity::Single => {
                    obj.insert("doc".into(), json!(ex.docs[0]));
                }
                Arity::Pair => {
                    obj.insert("doc1".into(), json!(ex.docs[0]));
                    obj.insert("doc2".into(), json!(ex.docs[1]));
                }
            }
            match ex.target {
                Target::Label(l) => obj.insert("label".into(), json!(l)),
                Target::Value(v) => obj.insert("target".into(), json!(v)),
            };
            out.push_str(&Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// All document texts, in example order.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().flat_map(|e| e.docs.iter().map(String::as_str))
    }
}

pub fn load_jsonl(path: &Path, task_kind: TaskKind, arity: Arity) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, task_kind, arity)
}

/// Parses JSONL records, validating each against `task_kind` and `arity`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_jsonl(text: &str, task_kind: TaskKind, arity: Arity) -> Result<Dataset> {
    let mut ds = Dataset::new(task_kind, arity);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(line).map_err(|e| Error::ParseError { line: line_no, message: e.to_string() })?;
        ds.examples.push(
            parse_record(&value, task_kind, arity)
                .map_err(|reason| Error::SchemaViolation { line: line_no, reason })?,
        );
    }
    Ok(ds)
}

fn parse_record(value: &Value, task_kind: TaskKind, arity: Arity) -> Result<Example, String> {
    let obj = value.as_object().ok_or("record is not an object")?;
    let str_field = |name: &str| -> Result<String, String> {
        obj.get(name)
            .ok_or_else(|| format!("missing {name:?}"))?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| format!("{name:?} is not a string"))
    };
    let id = str_field("id")?;
    let docs = match arity {
        Arity::Single => vec![str_field("doc")?],
        Arity::Pair => vec![str_field("doc1")?, str_field("doc2")?],
    };
    let target = match task_kind {
        TaskKind::Regression => {
            let v = obj.get("target").ok_or("missing \"target\"")?;
            Target::Value(v.as_f64().ok_or("\"target\" is not a number")?)
        }
        kind => {
            let v = obj.get("label").ok_or("missing \"label\"")?;
            let label = v.as_u64().ok_or("\"label\" is not a non-negative integer")? as usize;
            let k = kind.num_classes().unwrap_or(0);
            if label >= k {
                return Err(format!("label {label} out of range for {kind}"));
            }
            Target::Label(label)
        }
    };
    Ok(Example { id, docs, target })
}

/// Per class, a uniform sample without replacement of `min(k, class size)`
/// examples; the combined result is shuffled.
pub fn few_shot_sample(dataset: &Dataset, k_per_class: usize, rng: &mut Rng) -> Result<Dataset> {
    if dataset.task_kind.num_classes().is_none() {
        return Err(Error::NotClassification);
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, ex) in dataset.examples.iter().enumerate() {
        if let Target::Label(l) = ex.target {
            by_class.entry(l).or_default().push(i);
        }
    }
    let mut picked = Vec::new();
    for members in by_class.values() {
        let take = k_per_class.min(members.len());
        for j in rand::seq::index::sample(rng, members.len(), take) {
            picked.push(members[j]);
        }
    }
    picked.shuffle(rng);
    Ok(dataset.with_examples(picked.into_iter().map(|i| dataset.examples[i].clone()).collect()))
}

/// Uniform sample without replacement of `round(fraction * n)` examples,
/// at least one when the dataset is non-empty.
pub fn fraction_sample(dataset: &Dataset, fraction: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    let n = dataset.len();
    let count = ((fraction * n as f64).round() as usize).max(1).min(n);
    let mut picked = rand::seq::index::sample(rng, n, count).into_vec();
    picked.shuffle(rng);
    Ok(dataset.with_examples(picked.into_iter().map(|i| dataset.examples[i].clone()).collect()))
}
