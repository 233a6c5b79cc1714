//! Synthetic stand-in tasks shaped like the product-catalog benchmarks:
//! a pairwise binary matching task, a single-document multiclass task and
//! a single-document regression task.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Arity, Dataset, Example, Target, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

/// Dollars per digit unit in the price task.
pub const PRICE_SCALE: f64 = 0.1;

const BASES: [&str; 5] = ["mug", "shirt", "lamp", "chair", "boot"];
const ATTRIBUTES: [&str; 12] =
    ["red", "blue", "green", "black", "large", "small", "cotton", "steel", "wood", "soft", "bright", "classic"];
const GENRES: [&str; 8] = ["jazz", "rock", "blues", "folk", "metal", "disco", "opera", "reggae"];
const DISTRACTORS: [&str; 16] = [
    "song", "track", "album", "live", "remix", "night", "love", "road", "city", "dream", "heart", "radio", "summer",
    "band", "tour", "vinyl",
];
const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
const LONG_PADDING_WORDS: usize = 150;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    ToyPair,
    ToyGenre,
    ToyPrice,
}

impl SyntheticTask {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::ToyPair => "toy_pair",
            SyntheticTask::ToyGenre => "toy_genre",
            SyntheticTask::ToyPrice => "toy_price",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "toy_pair" => Some(SyntheticTask::ToyPair),
            "toy_genre" => Some(SyntheticTask::ToyGenre),
            "toy_price" => Some(SyntheticTask::ToyPrice),
            _ => None,
        }
    }

    pub fn arity(self) -> Arity {
        match self {
            SyntheticTask::ToyPair => Arity::Pair,
            _ => Arity::Single,
        }
    }
}

fn default_classes() -> usize {
    GENRES.len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub task: SyntheticTask,
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    /// Number of genres for `toy_genre`.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Pads every document with distractors well past the default `max_len`.
    #[serde(default)]
    pub long_documents: bool,
}

impl GeneratorSpec {
    pub fn new(task: SyntheticTask, size: usize, seed: u64, noise: f64) -> Self {
        GeneratorSpec { task, size, seed, noise, classes: default_classes(), long_documents: false }
    }

    pub fn generate(&self) -> Result<Dataset> {
        gen_synthetic(self)
    }
}

/// Pure function of the spec. Labels are assigned round-robin before the
/// examples are shuffled, so classes are balanced.
///
/// * `toy_pair`: label 1 iff both documents share the base noun; the label is
///   flipped with probability `noise`.
/// * `toy_genre`: the class is the one genre keyword hidden among distractor
///   words; with probability `noise` the keyword is swapped for another
///   class's keyword.
/// * `toy_price`: target is `PRICE_SCALE` times the sum of the digit words,
///   plus Gaussian noise with standard deviation `noise`.
pub fn gen_synthetic(spec: &GeneratorSpec) -> Result<Dataset> {
    if spec.size < 10 {
        return Err(Error::InvalidParams(format!("size {} is below 10", spec.size)));
    }
    if !(0.0..0.5).contains(&spec.noise) {
        return Err(Error::InvalidParams(format!("noise {} is outside [0, 0.5)", spec.noise)));
    }
    if spec.task == SyntheticTask::ToyGenre && !(2..=GENRES.len()).contains(&spec.classes) {
        return Err(Error::InvalidParams(format!(
            "toy_genre supports 2..={} classes, got {}",
            GENRES.len(),
            spec.classes
        )));
    }
    let mut rng = seeded(spec.seed);
    let mut examples: Vec<Example> = (0..spec.size)
        .map(|i| {
            let (docs, target) = match spec.task {
                SyntheticTask::ToyPair => pair_example(i, spec, &mut rng),
                SyntheticTask::ToyGenre => genre_example(i, spec, &mut rng),
                SyntheticTask::ToyPrice => price_example(spec, &mut rng),
            };
            let docs =
                if spec.long_documents { docs.into_iter().map(|d| lengthen(d, &mut rng)).collect() } else { docs };
            Example { id: format!("{}-{i}", spec.task.name()), docs, target }
        })
        .collect();
    examples.shuffle(&mut rng);
    let task_kind = match spec.task {
        SyntheticTask::ToyPair => TaskKind::Binary,
        SyntheticTask::ToyGenre => TaskKind::Multiclass(spec.classes),
        SyntheticTask::ToyPrice => TaskKind::Regression,
    };
    Ok(Dataset { examples, task_kind, arity: spec.task.arity() })
}

fn attributes(rng: &mut Rng, lo: usize, hi: usize) -> Vec<&'static str> {
    let n = rng.random_range(lo..=hi);
    ATTRIBUTES.choose_multiple(rng, n).copied().collect()
}

fn product_doc(base: &str, rng: &mut Rng) -> String {
    let mut words = vec![base];
    words.extend(attributes(rng, 2, 3));
    words.join(" ")
}

fn pair_example(i: usize, spec: &GeneratorSpec, rng: &mut Rng) -> (Vec<String>, Target) {
    let matched = i % 2 == 1;
    let b1 = rng.random_range(0..BASES.len());
    let b2 = if matched { b1 } else { (b1 + rng.random_range(1..BASES.len())) % BASES.len() };
    let docs = vec![product_doc(BASES[b1], rng), product_doc(BASES[b2], rng)];
    let flip = spec.noise > 0.0 && rng.random_bool(spec.noise);
    (docs, Target::Label((matched ^ flip) as usize))
}

fn genre_example(i: usize, spec: &GeneratorSpec, rng: &mut Rng) -> (Vec<String>, Target) {
    let class = i % spec.classes;
    let mut keyword = class;
    if spec.noise > 0.0 && rng.random_bool(spec.noise) {
        keyword = (class + rng.random_range(1..spec.classes)) % spec.classes;
    }
    let n = rng.random_range(4..=7);
    let mut words: Vec<&str> = (0..n).map(|_| *DISTRACTORS.choose(rng).unwrap()).collect();
    let pos = rng.random_range(0..=words.len());
    words.insert(pos, GENRES[keyword]);
    (vec![words.join(" ")], Target::Label(class))
}

fn price_example(spec: &GeneratorSpec, rng: &mut Rng) -> (Vec<String>, Target) {
    let mut words = vec![*BASES.choose(rng).unwrap()];
    words.extend(attributes(rng, 1, 2));
    let n_digits = rng.random_range(1..=3);
    let mut sum = 0usize;
    for _ in 0..n_digits {
        let d = rng.random_range(0..10);
        sum += d;
        let pos = rng.random_range(1..=words.len());
        words.insert(pos, DIGITS[d]);
    }
    let mut target = PRICE_SCALE * sum as f64;
    if spec.noise > 0.0 {
        target += Normal::new(0.0, spec.noise).unwrap().sample(rng);
    }
    (vec![words.join(" ")], Target::Value(target))
}

fn lengthen(doc: String, rng: &mut Rng) -> String {
    let mut out = doc;
    for _ in 0..LONG_PADDING_WORDS {
        out.push(' ');
        out.push_str(DISTRACTORS.choose(rng).unwrap());
    }
    out
}
