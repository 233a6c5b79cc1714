//! Fixtures shared by the benchmarks.

use dynamar::data::{gen_synthetic, GeneratorSpec, SyntheticTask};
use dynamar::templating::EncodedInput;
use dynamar::tokenizer::{train_bpe, Vocab};

/// Texts from all three synthetic tasks.
pub fn corpus(per_task: usize) -> Vec<String> {
    let mut out = Vec::new();
    for task in [SyntheticTask::ToyPair, SyntheticTask::ToyGenre, SyntheticTask::ToyPrice] {
        let ds = gen_synthetic(&GeneratorSpec::new(task, per_task, 1, 0.0)).unwrap();
        out.extend(ds.texts().map(str::to_string));
    }
    out
}

pub fn vocab(size: usize) -> Vocab {
    train_bpe(&corpus(200), size).unwrap()
}

/// `batch` tokenized documents laid out for a `max_len` window.
pub fn batch(vocab: &Vocab, batch: usize, max_len: usize) -> Vec<EncodedInput> {
    corpus(batch)
        .iter()
        .take(batch)
        .map(|t| {
            let ids = vocab.encode(t);
            EncodedInput::from_body(&ids[..ids.len().min(max_len - 2)], max_len)
        })
        .collect()
}
