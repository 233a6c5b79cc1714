use proptest::prelude::*;

use dynamar::templating::{parse_template, render, truncate_documents, truncation_lengths, Segment};
use dynamar::tokenizer::{train_bpe, TokenSeq, Vocab, CLS, MASK, NUM_SPECIALS, PAD, SEP};

fn vocab() -> Vocab {
    train_bpe(&["the price is", "are they the same product", "music genre"], 50).unwrap()
}

const PAIR_TEMPLATES: [&str; 4] = [
    "{x1} and {x2} are [MASK] product",
    "Are {x1} and {x2} the same product? [MASK]",
    "[MASK] {x2} {x1}",
    "{x1}{x2}[MASK]",
];

fn docs(n: usize) -> impl Strategy<Value = Vec<TokenSeq>> {
    prop::collection::vec(prop::collection::vec(NUM_SPECIALS as u32..40, 0..60), n)
}

proptest! {
    #[test]
    fn shares_fill_the_budget(lengths in prop::collection::vec(0usize..300, 1..6), budget in 0usize..400) {
        let shares = truncation_lengths(&lengths, budget);
        let total: usize = lengths.iter().sum();
        prop_assert_eq!(shares.iter().sum::<usize>(), budget.min(total));
        for (s, l) in shares.iter().zip(&lengths) {
            prop_assert!(s <= l);
            if total > budget {
                // within one token of the exact proportional quota
                let quota = budget as f64 * *l as f64 / total as f64;
                prop_assert!((*s as f64 - quota).abs() < 1.0);
            }
        }
    }

    #[test]
    fn truncation_keeps_prefixes(d in docs(2), budget in 0usize..100) {
        let cut = truncate_documents(&d, budget);
        for (c, orig) in cut.iter().zip(&d) {
            prop_assert!(orig.starts_with(c));
        }
    }

    #[test]
    fn pair_renders_keep_layout(t in 0..PAIR_TEMPLATES.len(), d in docs(2), extra in 0usize..40) {
        let v = vocab();
        let template = parse_template(PAIR_TEMPLATES[t]).unwrap();
        let literal: usize = template
            .segments()
            .iter()
            .map(|s| match s {
                Segment::Literal(text) => v.encode(text).len(),
                _ => 0,
            })
            .sum();
        let max_len = literal + 3 + extra + 10;
        let enc = render(&template, &d, max_len, &v).unwrap();
        prop_assert_eq!(enc.check(max_len), Ok(()));
        prop_assert_eq!(enc.ids.len(), max_len);
        prop_assert_eq!(enc.ids[0], CLS);
        prop_assert_eq!(enc.ids[enc.attention_length - 1], SEP);
        prop_assert_eq!(enc.valid_ids().iter().filter(|&&t| t == MASK).count(), 1);
        prop_assert!(enc.ids[enc.attention_length..].iter().all(|&t| t == PAD));
        let fits = d.iter().map(Vec::len).sum::<usize>() + literal + 3 <= max_len;
        if fits {
            for doc in &d {
                let found = doc.is_empty() || enc.ids.windows(doc.len()).any(|w| w == &doc[..]);
                prop_assert!(found);
            }
        }
    }

    #[test]
    fn single_renders_never_overflow(d in docs(1), max_len in 12usize..64) {
        let v = vocab();
        let template = parse_template("{x} The price is [MASK]").unwrap();
        let enc = render(&template, &d, max_len, &v).unwrap();
        prop_assert_eq!(enc.check(max_len), Ok(()));
        let literal = v.encode(" The price is ");
        let mask = enc.mask_index.unwrap();
        prop_assert_eq!(&enc.ids[mask - literal.len()..mask], &literal[..]);
    }
}

#[test]
fn template_longer_than_window_is_rejected() {
    let v = vocab();
    let template = parse_template("Are {x1} and {x2} the same product? [MASK]").unwrap();
    assert!(render(&template, &[vec![], vec![]], 5, &v).is_err());
}
