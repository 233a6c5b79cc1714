use rand::Rng as _;

use super::loss::MlmTarget;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::templating::EncodedInput;
use crate::tokenizer::{is_special, TokenId, MASK, NUM_SPECIALS};

/// Masked-language-model corruption. Each non-special position is selected
/// with probability `mask_rate`; a selected token becomes `[MASK]` (80%), a
/// random non-special token (10%) or stays unchanged (10%).
pub fn mlm_mask(
    batch: &[EncodedInput],
    rng: &mut Rng,
    mask_rate: f64,
    vocab_size: usize,
) -> Result<(Vec<EncodedInput>, Vec<MlmTarget>)> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::InvalidArgument(format!("mask_rate {mask_rate} is outside (0, 1)")));
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(Error::InvalidArgument(format!("vocab_size {vocab_size} has no ordinary tokens")));
    }
    let mut corrupted = batch.to_vec();
    let mut targets = Vec::new();
    for (seq, x) in corrupted.iter_mut().enumerate() {
        for pos in 0..x.attention_length {
            let id = x.ids[pos];
            if is_special(id) || !rng.random_bool(mask_rate) {
                continue;
            }
            targets.push(MlmTarget { seq, pos, id });
            let r: f64 = rng.random();
            if r < 0.8 {
                x.ids[pos] = MASK;
            } else if r < 0.9 {
                x.ids[pos] = rng.random_range(NUM_SPECIALS as TokenId..vocab_size as TokenId);
            }
        }
        x.mask_index = None;
    }
    Ok((corrupted, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn batch() -> Vec<EncodedInput> {
        (0..8).map(|i| EncodedInput::from_body(&[5 + i, 6, 7, 8, 9, 10, 11, 3, 12], 16)).collect()
    }

    #[test]
    fn specials_are_never_targets() {
        let mut rng = seeded(1);
        for _ in 0..10_000 / 8 {
            let input = batch();
            let (out, targets) = mlm_mask(&input, &mut rng, 0.5, 40).unwrap();
            for t in &targets {
                assert!(!is_special(t.id));
                assert_eq!(input[t.seq].ids[t.pos], t.id);
            }
            for (a, b) in input.iter().zip(&out) {
                assert_eq!(a.attention_length, b.attention_length);
                for (p, (&x, &y)) in a.ids.iter().zip(&b.ids).enumerate() {
                    if is_special(x) {
                        assert_eq!(x, y, "special token changed at {p}");
                    }
                }
            }
        }
    }

    #[test]
    fn selection_rate_is_binomial() {
        let mut rng = seeded(2);
        let rate = 0.15;
        let (mut selected, mut eligible) = (0usize, 0usize);
        while eligible < 100_000 {
            let input = batch();
            eligible += input.iter().map(|x| x.valid_ids().iter().filter(|&&t| !is_special(t)).count()).sum::<usize>();
            selected += mlm_mask(&input, &mut rng, rate, 40).unwrap().1.len();
        }
        let n = eligible as f64;
        let sigma = (n * rate * (1.0 - rate)).sqrt();
        assert!((selected as f64 - n * rate).abs() <= 3.0 * sigma, "{selected} of {eligible}");
    }

    #[test]
    fn corruption_split() {
        let mut rng = seeded(3);
        let (mut masked, mut kept, mut total) = (0usize, 0usize, 0usize);
        for _ in 0..500 {
            let input = batch();
            let (out, targets) = mlm_mask(&input, &mut rng, 0.5, 40).unwrap();
            for t in targets {
                total += 1;
                match out[t.seq].ids[t.pos] {
                    MASK => masked += 1,
                    id if id == t.id => kept += 1,
                    _ => {}
                }
            }
        }
        let frac = masked as f64 / total as f64;
        assert!((frac - 0.8).abs() < 0.02, "masked fraction {frac}");
        // unchanged: 10% kept plus 10% * 1/35 random draws of the same id
        let frac = kept as f64 / total as f64;
        assert!((frac - (0.1 + 0.1 / 35.0)).abs() < 0.02, "kept fraction {frac}");
    }

    #[test]
    fn tiny_rate_can_select_nothing() {
        let mut rng = seeded(4);
        let input = vec![EncodedInput::from_body(&[7], 8)];
        let (out, targets) = mlm_mask(&input, &mut rng, 1e-12, 40).unwrap();
        assert!(targets.is_empty());
        assert_eq!(out[0].ids, input[0].ids);
        assert!(mlm_mask(&input, &mut rng, 0.0, 40).is_err());
        assert!(mlm_mask(&input, &mut rng, 1.0, 40).is_err());
    }
}
