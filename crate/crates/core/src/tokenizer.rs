//! Whitespace/punctuation tokenizer over a fixed hashed vocabulary.
//!
//! Words are lowercased and mapped into `vocab_size - 4` buckets with FNV-1a;
//! ids 0..4 are reserved for the special tokens. The vocabulary is therefore a
//! property of the backbone (its embedding table) and needs no vocab file.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
const RESERVED: u32 = 4;

/// Token ids plus the segment (0 = first sentence, 1 = second) of each position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    /// Set when the input had to be cut to `max_len`.
    pub truncated: bool,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocab_size: u32,
    pub max_len: usize,
}

/// Lowercased word pieces: alphanumeric runs and single punctuation characters.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.into());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Tokenizer {
    pub fn new(vocab_size: u32, max_len: usize) -> Self {
        assert!(vocab_size > RESERVED, "vocabulary too small");
        assert!(max_len >= 3, "max_len must fit [CLS] x [SEP]");
        Self {
            vocab_size,
            max_len,
        }
    }

    pub fn word_id(&self, word: &str) -> u32 {
        if word.is_empty() {
            return UNK_ID;
        }
        RESERVED + (fnv1a(word.as_bytes()) % u64::from(self.vocab_size - RESERVED)) as u32
    }

    fn ids(&self, text: &str) -> Vec<u32> {
        split_words(text).iter().map(|w| self.word_id(w)).collect()
    }

    /// `[CLS] a [SEP]`, truncated to `max_len`.
    pub fn encode(&self, text: &str) -> Encoding {
        let mut a = self.ids(text);
        let budget = self.max_len - 2;
        let truncated = a.len() > budget;
        a.truncate(budget);
        let mut ids = Vec::with_capacity(a.len() + 2);
        ids.push(CLS_ID);
        ids.extend(a);
        ids.push(SEP_ID);
        let segments = alloc::vec![0; ids.len()];
        Encoding {
            ids,
            segments,
            truncated,
        }
    }

    /// `[CLS] a [SEP] b [SEP]`, truncating the longer side first.
    pub fn encode_pair(&self, first: &str, second: &str) -> Encoding {
        let mut a = self.ids(first);
        let mut b = self.ids(second);
        let budget = self.max_len - 3;
        let truncated = a.len() + b.len() > budget;
        while a.len() + b.len() > budget {
            if a.len() >= b.len() {
                a.pop();
            } else {
                b.pop();
            }
        }
        let mut ids = Vec::with_capacity(a.len() + b.len() + 3);
        let mut segments = Vec::with_capacity(ids.capacity());
        ids.push(CLS_ID);
        ids.extend(a);
        ids.push(SEP_ID);
        segments.resize(ids.len(), 0);
        ids.extend(b);
        ids.push(SEP_ID);
        segments.resize(ids.len(), 1);
        Encoding {
            ids,
            segments,
            truncated,
        }
    }

    pub fn encode_unit(&self, unit: &crate::lexicon::TextUnit) -> Encoding {
        match unit.second() {
            None => self.encode(unit.first()),
            Some(second) => self.encode_pair(unit.first(), second),
        }
    }
}
