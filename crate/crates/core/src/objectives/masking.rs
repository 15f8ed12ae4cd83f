use serde::{Deserialize, Serialize};

use crate::attributes::tokenizer::{is_special, MASK, NUM_SPECIAL};
use crate::numcore::RngStream;

pub const MASK_PROB: f64 = 0.25;
pub const MASK_TOKEN_PROB: f64 = 0.8;
pub const RANDOM_TOKEN_PROB: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub position: usize,
    pub original: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masked {
    pub tokens: Vec<u32>,
    pub records: Vec<MaskRecord>,
}

impl Masked {
    pub fn positions(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.position).collect()
    }

    pub fn originals(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.original).collect()
    }
}

/// Selects each non-special token w.p. 0.25, then replaces it with `[MASK]`
/// (80%), a random non-special token (10%) or leaves it unchanged (10%).
pub fn mask_tokens(tokens: &[u32], vocab_size: usize, rng: &mut RngStream) -> Masked {
    mask_tokens_with(tokens, vocab_size, MASK_PROB, rng)
}

/// [`mask_tokens`] with a custom selection probability.
pub fn mask_tokens_with(tokens: &[u32], vocab_size: usize, select_prob: f64, rng: &mut RngStream) -> Masked {
    let mut out = tokens.to_vec();
    let mut records = Vec::new();
    let words = vocab_size.saturating_sub(NUM_SPECIAL as usize);
    for (position, &original) in tokens.iter().enumerate() {
        if is_special(original) || !rng.coin(select_prob) {
            continue;
        }
        let u = rng.uniform();
        if u < MASK_TOKEN_PROB {
            out[position] = MASK;
        } else if u < MASK_TOKEN_PROB + RANDOM_TOKEN_PROB && words > 0 {
            out[position] = NUM_SPECIAL + rng.below(words) as u32;
        }
        records.push(MaskRecord { position, original });
    }
    Masked { tokens: out, records }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::tokenizer::{CLS, PAD};

    #[test]
    fn specials_are_never_touched() {
        let tokens = [CLS, 10, 11, 12, PAD, PAD];
        for s in 0..200 {
            let m = mask_tokens(&tokens, 50, &mut RngStream::new(s, 0));
            assert_eq!(m.tokens[0], CLS);
            assert_eq!(&m.tokens[4..], &[PAD, PAD]);
            for r in &m.records {
                assert!((1..4).contains(&r.position));
                assert_eq!(r.original, tokens[r.position]);
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let tokens: Vec<u32> = (4..40).collect();
        let a = mask_tokens(&tokens, 100, &mut RngStream::new(9, 3));
        let b = mask_tokens(&tokens, 100, &mut RngStream::new(9, 3));
        assert_eq!(a, b);
    }
}
