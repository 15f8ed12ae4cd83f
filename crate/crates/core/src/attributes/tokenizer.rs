//! Word-level tokenizer with a frequency-capped vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const UNK: u32 = 2;
pub const MASK: u32 = 3;
pub const NUM_SPECIAL: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[CLS]", "[UNK]", "[MASK]"];

/// Longest encoded sequence, `[CLS]` included.
pub const MAX_TOKENS: usize = 56;
pub const DEFAULT_VOCAB_CAP: usize = 8192;

/// Lowercases and splits into words and single punctuation marks.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// The text form that survives a tokenize/detokenize round trip.
pub fn normalize(text: &str) -> String {
    pre_tokenize(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from a corpus plus texts that must always be covered.
    ///
    /// Required tokens are kept first; remaining slots go to corpus tokens by
    /// descending frequency, ties broken lexicographically.
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a str>,
        required: impl IntoIterator<Item = &'a str>,
        cap: usize,
    ) -> Result<Self> {
        if cap <= NUM_SPECIAL as usize {
            return Err(Error::config(format!("vocabulary cap {cap} leaves no room for words")));
        }
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut seen: HashMap<String, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

        let mut req: Vec<String> = required.into_iter().flat_map(pre_tokenize).collect();
        req.sort();
        req.dedup();
        for t in req {
            if !seen.contains_key(&t) {
                if tokens.len() >= cap {
                    return Err(Error::config("vocabulary cap is smaller than the required prompt tokens"));
                }
                seen.insert(t.clone(), tokens.len() as u32);
                tokens.push(t);
            }
        }

        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for t in pre_tokenize(text) {
                *freq.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().filter(|(t, _)| !seen.contains_key(t)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (t, _) in ranked.into_iter().take(cap - tokens.len()) {
            seen.insert(t.clone(), tokens.len() as u32);
            tokens.push(t);
        }
        Ok(Self { tokens, index: seen })
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL as usize || tokens[..4] != SPECIAL_TOKENS {
            return Err(Error::config("vocabulary must start with [PAD] [CLS] [UNK] [MASK]"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::config(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or("[UNK]")
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// `[CLS]` + up to 55 word ids, padded with `[PAD]` to exactly [`MAX_TOKENS`].
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenize_to(text, MAX_TOKENS)
    }

    pub fn tokenize_to(&self, text: &str, max_tokens: usize) -> Vec<u32> {
        let mut ids = Vec::with_capacity(max_tokens);
        ids.push(CLS);
        ids.extend(pre_tokenize(text).iter().take(max_tokens.saturating_sub(1)).map(|t| self.id(t)));
        ids.resize(max_tokens, PAD);
        ids
    }

    /// Joins non-special tokens with single spaces (`[UNK]` is kept).
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id != PAD && id != CLS)
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Length after dropping trailing `[PAD]`s (at least 1, for `[CLS]`).
pub fn effective_len(ids: &[u32]) -> usize {
    ids.iter().rposition(|&t| t != PAD).map_or(1, |p| p + 1).max(1)
}

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIAL
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["a man walks. a man runs!"], ["the person is a man"], 100).unwrap()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(pre_tokenize("A man."), vec!["a", "man", "."]);
        assert_eq!(pre_tokenize("  T-shirt,  JEANS "), vec!["t", "-", "shirt", ",", "jeans"]);
        assert!(pre_tokenize("").is_empty());
    }

    #[test]
    fn tokenize_prepends_cls_and_pads() {
        let v = vocab();
        let ids = v.tokenize("A man.");
        assert_eq!(ids.len(), MAX_TOKENS);
        assert_eq!(&ids[..4], &[CLS, v.id("a"), v.id("man"), v.id(".")]);
        assert!(ids[4..].iter().all(|&t| t == PAD));
        assert_eq!(effective_len(&ids), 4);
    }

    #[test]
    fn long_captions_truncate_to_56() {
        let v = vocab();
        let text = vec!["man"; 100].join(" ");
        let ids = v.tokenize(&text);
        assert_eq!(ids.len(), 56);
        assert!(ids[1..].iter().all(|&t| t == v.id("man")));
    }

    #[test]
    fn empty_caption_is_cls_and_pads() {
        let ids = vocab().tokenize("");
        assert_eq!(ids[0], CLS);
        assert!(ids[1..].iter().all(|&t| t == PAD));
        assert_eq!(effective_len(&ids), 1);
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = vocab();
        assert_eq!(v.tokenize("zebra")[1], UNK);
    }

    #[test]
    fn roundtrip_recovers_normalized_text() {
        let v = vocab();
        let text = "A man runs! the person walks.";
        assert_eq!(v.detokenize(&v.tokenize(text)), normalize(text));
    }

    #[test]
    fn required_tokens_survive_a_tight_cap() {
        let v = Vocab::build(["x x x y y z"], ["the person"], 7).unwrap();
        assert!(v.contains("the") && v.contains("person"));
        assert_eq!(v.len(), 7);
        assert!(v.contains("x"));
        assert!(!v.contains("z"));
    }

    #[test]
    fn ids_are_deterministic() {
        let a = Vocab::build(["b a c a b"], [], 50).unwrap();
        let b = Vocab::build(["b a c a b"], [], 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token(4), "a");
        assert_eq!(a.token(5), "b");
    }
}
