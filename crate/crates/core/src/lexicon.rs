//! Bias-attribute lexicon and counterfactual data augmentation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The binary-gender lexicon shipped with the kit.
pub const DEFAULT_GENDER_LEXICON: &str = include_str!("../data/gender_lexicon.tsv");

/// One lexicon line: `term` maps to `counterpart`, and back unless one-way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub term: String,
    pub counterpart: String,
    pub one_way: bool,
}

/// Bidirectional map between bias-attribute terms of opposite groups.
///
/// Terms are stored lowercase. Every term may be the *source* of at most one
/// mapping; one-way entries let an ambiguous form (`his`) map onto a term that
/// already has its own reverse mapping (`her -> him`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasLexicon {
    entries: Vec<LexiconEntry>,
    forward: BTreeMap<String, String>,
}

impl BiasLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped binary-gender lexicon.
    pub fn default_gender() -> Self {
        Self::parse(DEFAULT_GENDER_LEXICON).expect("shipped lexicon is valid")
    }

    /// Parses the line-oriented lexicon format: two whitespace-separated terms
    /// per line, an optional third column `oneway`, `#` comments and blank lines
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lexicon = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let line_no = idx + 1;
            let one_way = match fields.as_slice() {
                [_, _] => false,
                [_, _, flag] if flag.eq_ignore_ascii_case("oneway") => true,
                [_, _, flag] => {
                    return Err(Error::LexiconParse {
                        line: line_no,
                        reason: alloc::format!("unknown flag `{flag}`"),
                    })
                }
                _ => {
                    return Err(Error::LexiconParse {
                        line: line_no,
                        reason: alloc::format!("expected two terms, found {}", fields.len()),
                    })
                }
            };
            for term in &fields[..2] {
                if !term.chars().all(char::is_alphanumeric) {
                    return Err(Error::LexiconParse {
                        line: line_no,
                        reason: alloc::format!("`{term}` is not a single word"),
                    });
                }
            }
            lexicon.insert(fields[0], fields[1], one_way)?;
        }
        Ok(lexicon)
    }

    /// Adds an entry, rejecting self-maps and terms already used as a source.
    pub fn insert(&mut self, term: &str, counterpart: &str, one_way: bool) -> Result<()> {
        let a = term.to_lowercase();
        let b = counterpart.to_lowercase();
        if a == b {
            return Err(Error::SelfMapped(a));
        }
        if self.forward.contains_key(&a) {
            return Err(Error::DuplicateTerm(a));
        }
        if !one_way && self.forward.contains_key(&b) {
            return Err(Error::DuplicateTerm(b));
        }
        self.forward.insert(a.clone(), b.clone());
        if !one_way {
            self.forward.insert(b.clone(), a.clone());
        }
        self.entries.push(LexiconEntry {
            term: a,
            counterpart: b,
            one_way,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Counterpart of a (case-insensitive) term.
    pub fn lookup(&self, term: &str) -> Option<&str> {
        self.forward.get(&term.to_lowercase()).map(String::as_str)
    }

    /// Terms whose mapping round-trips (`map(map(t)) == t`).
    pub fn involutive_terms(&self) -> Vec<&str> {
        self.forward
            .iter()
            .filter(|(t, c)| self.forward.get(*c) == Some(t))
            .map(|(t, _)| t.as_str())
            .collect()
    }

    /// Canonical text form, suitable for hashing.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.term);
            out.push('\t');
            out.push_str(&e.counterpart);
            if e.one_way {
                out.push_str("\toneway");
            }
            out.push('\n');
        }
        out
    }
}

/// A single sentence or a sentence pair (premise/hypothesis, STS pair).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TextUnit {
    Single(String),
    Pair(String, String),
}

impl TextUnit {
    pub fn single(s: impl Into<String>) -> Self {
        TextUnit::Single(s.into())
    }

    pub fn pair(a: impl Into<String>, b: impl Into<String>) -> Self {
        TextUnit::Pair(a.into(), b.into())
    }

    pub fn first(&self) -> &str {
        match self {
            TextUnit::Single(s) | TextUnit::Pair(s, _) => s,
        }
    }

    pub fn second(&self) -> Option<&str> {
        match self {
            TextUnit::Single(_) => None,
            TextUnit::Pair(_, s) => Some(s),
        }
    }
}

/// Task label: a class id or a real-valued score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Score(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: TextUnit,
    pub label: Label,
}

impl LabeledText {
    pub fn new(text: TextUnit, label: Label) -> Self {
        Self { text, label }
    }
}

/// An original example and, when it mentions a bias-attribute term, its
/// counterfactual. Both share the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualExample {
    pub original: TextUnit,
    pub augmented: Option<TextUnit>,
    pub label: Label,
}

impl CounterfactualExample {
    pub fn has_attribute(&self) -> bool {
        self.augmented.is_some()
    }
}

/// A word token's byte span inside its sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
}

/// Word tokens: maximal runs of alphanumeric characters. Whitespace and
/// punctuation are boundaries, so `manager` never matches `man` and `man's`
/// yields `man` + `s`.
pub fn word_spans(text: &str) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push(WordSpan { start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(WordSpan {
            start: s,
            end: text.len(),
        });
    }
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Casing {
    Lower,
    Title,
    Upper,
    Mixed,
}

fn casing_of(word: &str) -> Casing {
    let mut chars = word.chars();
    let Some(first) = chars.next() else {
        return Casing::Lower;
    };
    let rest: Vec<char> = chars.collect();
    let rest_lower = rest.iter().all(|c| !c.is_uppercase());
    let rest_upper = rest.iter().all(|c| !c.is_lowercase());
    if !first.is_uppercase() {
        if rest_lower {
            Casing::Lower
        } else {
            Casing::Mixed
        }
    } else if rest_lower {
        Casing::Title
    } else if rest_upper {
        Casing::Upper
    } else {
        Casing::Mixed
    }
}

fn apply_casing(lower: &str, casing: Casing) -> String {
    match casing {
        Casing::Lower | Casing::Mixed => lower.to_string(),
        Casing::Upper => lower.to_uppercase(),
        Casing::Title => {
            let mut chars = lower.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
    }
}

/// Swaps every lexicon term in one sentence, or `None` when nothing matched.
pub fn counterfactual_sentence(text: &str, lexicon: &BiasLexicon) -> Option<String> {
    let mut out = String::with_capacity(text.len() + 8);
    let mut cursor = 0;
    let mut matched = false;
    for span in word_spans(text) {
        let word = &text[span.start..span.end];
        if let Some(target) = lexicon.lookup(word) {
            out.push_str(&text[cursor..span.start]);
            out.push_str(&apply_casing(target, casing_of(word)));
            cursor = span.end;
            matched = true;
        }
    }
    if !matched {
        return None;
    }
    out.push_str(&text[cursor..]);
    Some(out)
}

/// Counterfactual of a text unit. Sentence pairs are swapped jointly; the
/// result is `None` only when neither member contains an attribute term.
pub fn counterfactual(text: &TextUnit, lexicon: &BiasLexicon) -> Option<TextUnit> {
    match text {
        TextUnit::Single(s) => counterfactual_sentence(s, lexicon).map(TextUnit::Single),
        TextUnit::Pair(a, b) => {
            let ca = counterfactual_sentence(a, lexicon);
            let cb = counterfactual_sentence(b, lexicon);
            if ca.is_none() && cb.is_none() {
                return None;
            }
            Some(TextUnit::Pair(
                ca.unwrap_or_else(|| a.clone()),
                cb.unwrap_or_else(|| b.clone()),
            ))
        }
    }
}

/// One [`CounterfactualExample`] per input, in input order.
pub fn augment_corpus(dataset: &[LabeledText], lexicon: &BiasLexicon) -> Vec<CounterfactualExample> {
    dataset
        .iter()
        .map(|item| CounterfactualExample {
            original: item.text.clone(),
            augmented: counterfactual(&item.text, lexicon),
            label: item.label,
        })
        .collect()
}
