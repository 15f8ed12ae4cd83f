//! Keyword lexicon and caption annotation.
//!
//! Explicit matching assigns an attribute when one of its phrases occurs as
//! consecutive whole words. When matches for the same attribute overlap, only
//! the longest survives ("without a hat" beats "hat"). Implicit extension then
//! fills attributes whose trigger words are entirely absent with a default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::space::{AttributeSpace, AttributeVector};

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.toml");

#[derive(Debug, Deserialize)]
struct LexiconFile {
    version: u32,
    #[serde(default)]
    classes: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    rule: Vec<RuleDef>,
    #[serde(default)]
    implicit: Vec<ImplicitDef>,
}

#[derive(Debug, Deserialize)]
struct RuleDef {
    attribute: String,
    value: u8,
    phrases: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ImplicitDef {
    attribute: String,
    value: u8,
    triggers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PatternWord {
    Word(String),
    Class(Vec<String>),
}

impl PatternWord {
    fn matches(&self, word: &str) -> bool {
        match self {
            PatternWord::Word(w) => w == word,
            PatternWord::Class(ws) => ws.iter().any(|w| w == word),
        }
    }
}

#[derive(Debug, Clone)]
struct Phrase {
    source: String,
    words: Vec<PatternWord>,
    attribute: usize,
    value: u8,
}

#[derive(Debug, Clone)]
struct ImplicitRule {
    attribute: usize,
    value: u8,
    triggers: Vec<String>,
}

/// Compiled keyword rules over an [`AttributeSpace`].
#[derive(Debug, Clone)]
pub struct Lexicon {
    phrases: Vec<Phrase>,
    implicit: Vec<ImplicitRule>,
}

/// Two explicit matches that disagree about one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub attribute: String,
    /// Matched phrases with the value each implied.
    pub matches: Vec<(String, u8)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub attributes: AttributeVector,
    pub conflicts: Vec<Conflict>,
}

/// Words used for matching: lowercase alphanumeric runs.
pub fn caption_words(caption: &str) -> Vec<String> {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Lexicon {
    pub fn default_for(space: &AttributeSpace) -> Self {
        Self::from_toml_str(DEFAULT_LEXICON, space).expect("shipped lexicon is valid")
    }

    pub fn load(path: impl AsRef<Path>, space: &AttributeSpace) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, space).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str, space: &AttributeSpace) -> Result<Self> {
        let file: LexiconFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<lexicon>".into(),
            message: e.to_string(),
        })?;
        if file.version != 1 {
            return Err(Error::config(format!("unsupported lexicon version {}", file.version)));
        }
        let attr_index = |name: &str| {
            space
                .index_of(name)
                .ok_or_else(|| Error::config(format!("lexicon names unknown attribute '{name}'")))
        };
        let check_value = |v: u8, name: &str| {
            if v > 1 {
                Err(Error::config(format!("value {v} for '{name}' is not 0 or 1")))
            } else {
                Ok(())
            }
        };

        let mut phrases = Vec::new();
        for rule in &file.rule {
            let attribute = attr_index(&rule.attribute)?;
            check_value(rule.value, &rule.attribute)?;
            for source in &rule.phrases {
                let words = compile_phrase(source, &file.classes)?;
                phrases.push(Phrase {
                    source: source.clone(),
                    words,
                    attribute,
                    value: rule.value,
                });
            }
        }
        // A phrase may not imply two values of one attribute.
        for (i, a) in phrases.iter().enumerate() {
            for b in &phrases[..i] {
                if a.source == b.source && a.attribute == b.attribute && a.value != b.value {
                    return Err(Error::config(format!(
                        "phrase '{}' maps '{}' to both 0 and 1",
                        a.source,
                        space.get(a.attribute).name
                    )));
                }
            }
        }

        let mut implicit = Vec::new();
        for def in &file.implicit {
            let attribute = attr_index(&def.attribute)?;
            check_value(def.value, &def.attribute)?;
            implicit.push(ImplicitRule {
                attribute,
                value: def.value,
                triggers: def.triggers.iter().map(|t| t.to_lowercase()).collect(),
            });
        }
        Ok(Self { phrases, implicit })
    }

    /// Explicit matching followed by implicit extension.
    pub fn annotate(&self, caption: &str, space: &AttributeSpace) -> Annotation {
        let words = caption_words(caption);

        // (attribute, start, end, value, phrase)
        let mut hits: Vec<(usize, usize, usize, u8, &str)> = Vec::new();
        for p in &self.phrases {
            let n = p.words.len();
            if n == 0 || n > words.len() {
                continue;
            }
            for start in 0..=words.len() - n {
                if p.words.iter().zip(&words[start..start + n]).all(|(pw, w)| pw.matches(w)) {
                    hits.push((p.attribute, start, start + n, p.value, &p.source));
                }
            }
        }
        // Drop matches strictly inside a longer match for the same attribute.
        let survivors: Vec<_> = hits
            .iter()
            .filter(|&&(attr, s, e, _, _)| {
                !hits.iter().any(|&(a2, s2, e2, _, _)| {
                    a2 == attr && s2 <= s && e <= e2 && (e2 - s2) > (e - s)
                })
            })
            .collect();

        let mut by_attr: BTreeMap<usize, Vec<(String, u8)>> = BTreeMap::new();
        for &&(attr, _, _, value, phrase) in &survivors {
            let entry = by_attr.entry(attr).or_default();
            if !entry.iter().any(|(p, v)| p == phrase && *v == value) {
                entry.push((phrase.to_string(), value));
            }
        }

        let mut attributes = AttributeVector::unknown();
        let mut conflicts = Vec::new();
        let mut touched = vec![false; space.len()];
        for (attr, matches) in by_attr {
            touched[attr] = true;
            let first = matches[0].1;
            if matches.iter().all(|(_, v)| *v == first) {
                attributes.set(attr, Some(first));
            } else {
                conflicts.push(Conflict {
                    attribute: space.get(attr).name.clone(),
                    matches,
                });
            }
        }

        for rule in &self.implicit {
            if touched[rule.attribute] || attributes.get(rule.attribute).is_some() {
                continue;
            }
            if !words.iter().any(|w| rule.triggers.iter().any(|t| t == w)) {
                attributes.set(rule.attribute, Some(rule.value));
            }
        }
        Annotation { attributes, conflicts }
    }
}

fn compile_phrase(source: &str, classes: &BTreeMap<String, Vec<String>>) -> Result<Vec<PatternWord>> {
    let mut words = Vec::new();
    for token in source.split_whitespace() {
        if let Some(class) = token.strip_prefix('@') {
            let members = classes
                .get(class)
                .ok_or_else(|| Error::config(format!("phrase '{source}' uses unknown class '@{class}'")))?;
            words.push(PatternWord::Class(members.iter().map(|m| m.to_lowercase()).collect()));
        } else {
            words.push(PatternWord::Word(token.to_lowercase()));
        }
    }
    if words.is_empty() {
        return Err(Error::config("empty lexicon phrase"));
    }
    Ok(words)
}
