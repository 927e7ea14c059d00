//! Extrinsic bias benchmark generators and the occupation-classification
//! record schema.
//!
//! Generators are deterministic: identical word lists produce identical
//! corpora in a fixed order, with no randomness involved.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot marker in sentence templates.
pub const SLOT: &str = "{X}";

/// The 28 occupation classes of the biography classification benchmark.
pub const BIOS_PROFESSIONS: [&str; 28] = [
    "accountant",
    "architect",
    "attorney",
    "chiropractor",
    "comedian",
    "composer",
    "dentist",
    "dietitian",
    "dj",
    "filmmaker",
    "interior_designer",
    "journalist",
    "model",
    "nurse",
    "painter",
    "paralegal",
    "pastor",
    "personal_trainer",
    "photographer",
    "physician",
    "poet",
    "professor",
    "psychologist",
    "rapper",
    "software_engineer",
    "surgeon",
    "teacher",
    "yoga_teacher",
];

/// Two sentence pairs sharing the profession sentence; only the gendered
/// subject differs between `pair_male.0` and `pair_female.0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasStsbUnit {
    pub unit_id: usize,
    pub template_id: usize,
    pub profession: String,
    pub pair_male: (String, String),
    pub pair_female: (String, String),
}

fn check_template(id: usize, template: &str) -> Result<()> {
    match template.matches(SLOT).count() {
        0 => Err(Error::MissingSlot(id)),
        1 => Ok(()),
        _ => Err(Error::MultipleSlots(id)),
    }
}

/// `|templates| × |professions|` units, template-major.
pub fn gen_bias_stsb<T: AsRef<str>, P: AsRef<str>>(
    templates: &[T],
    professions: &[P],
    gender_terms: (&str, &str),
) -> Result<Vec<BiasStsbUnit>> {
    for (i, t) in templates.iter().enumerate() {
        check_template(i, t.as_ref())?;
    }
    let (male, female) = gender_terms;
    let mut out = Vec::with_capacity(templates.len() * professions.len());
    for (template_id, t) in templates.iter().enumerate() {
        let t = t.as_ref();
        let sent_m = t.replace(SLOT, male);
        let sent_f = t.replace(SLOT, female);
        for p in professions {
            let p = p.as_ref();
            let shared = t.replace(SLOT, p);
            out.push(BiasStsbUnit {
                unit_id: out.len(),
                template_id,
                profession: p.to_string(),
                pair_male: (sent_m.clone(), shared.clone()),
                pair_female: (sent_f.clone(), shared),
            });
        }
    }
    Ok(out)
}

/// Indefinite article choice: vowel-letter initial gets `an`, with explicit
/// per-word overrides (`hour` → `an`, `university` → `a`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRule {
    exceptions: BTreeMap<String, String>,
}

impl ArticleRule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `word<ws>a|an` lines; `#` comments and blank lines ignored.
    pub fn parse_exceptions(text: &str) -> Result<Self> {
        let mut exceptions = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [word, art] if *art == "a" || *art == "an" => {
                    exceptions.insert(word.to_lowercase(), art.to_string());
                }
                _ => {
                    return Err(Error::LexiconParse {
                        line: i + 1,
                        reason: format!("expected `<word> a|an`, got `{line}`"),
                    })
                }
            }
        }
        Ok(Self { exceptions })
    }

    /// Article for a noun phrase, decided by the whole phrase or its first
    /// word.
    pub fn article(&self, noun: &str) -> &str {
        let lower = noun.to_lowercase();
        let first = lower.split_whitespace().next().unwrap_or("");
        if let Some(a) = self.exceptions.get(&lower).or_else(|| self.exceptions.get(first)) {
            return a;
        }
        match lower.chars().next() {
            Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
            _ => "a",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub verb: String,
    pub object: String,
}

impl Activity {
    pub fn new(verb: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            verb: verb.into(),
            object: object.into(),
        }
    }
}

/// Gold label of every generated NLI instance.
pub const NLI_GOLD: &str = "neutral";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasNliInstance {
    pub premise: String,
    pub hypothesis: String,
    pub gender_word: String,
    pub occupation: String,
}

/// Lazily generated `subject verb a/an object` neutral pairs. Instance `i`
/// is addressable directly, so the full cross product never needs to sit in
/// memory and shards can be produced by index range.
#[derive(Debug, Clone)]
pub struct BiasNliGenerator {
    gender_words: Vec<String>,
    occupations: Vec<String>,
    activities: Vec<Activity>,
    articles: ArticleRule,
}

impl BiasNliGenerator {
    pub fn new(
        gender_words: Vec<String>,
        occupations: Vec<String>,
        activities: Vec<Activity>,
        articles: ArticleRule,
    ) -> Result<Self> {
        if gender_words.is_empty() || occupations.is_empty() || activities.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            gender_words,
            occupations,
            activities,
            articles,
        })
    }

    /// `|gender words| × |occupations| × |activities|`
    pub fn len(&self) -> usize {
        self.gender_words.len() * self.occupations.len() * self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sentence(&self, subject: &str, activity: &Activity) -> String {
        format!(
            "The {subject} {} {} {}",
            activity.verb,
            self.articles.article(&activity.object),
            activity.object
        )
    }

    /// Instance by index (gender-major, then occupation, then activity).
    pub fn get(&self, index: usize) -> Option<BiasNliInstance> {
        if index >= self.len() {
            return None;
        }
        let na = self.activities.len();
        let no = self.occupations.len();
        let a = index % na;
        let o = (index / na) % no;
        let g = index / (na * no);
        let activity = &self.activities[a];
        Some(BiasNliInstance {
            premise: self.sentence(&self.gender_words[g], activity),
            hypothesis: self.sentence(&self.occupations[o], activity),
            gender_word: self.gender_words[g].clone(),
            occupation: self.occupations[o].clone(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = BiasNliInstance> + '_ {
        (0..self.len()).filter_map(move |i| self.get(i))
    }

    /// Indices of a sample stratified by (gender word, occupation): each stratum
    /// keeps `max(1, round(fraction × |activities|))` activities chosen with a
    /// seeded shuffle. Sorted ascending.
    pub fn stratified_sample(&self, fraction: f64, seed: u64) -> Vec<usize> {
        let na = self.activities.len();
        let per = ((fraction.clamp(0.0, 1.0) * na as f64 + 0.5) as usize).clamp(1, na);
        let strata = self.gender_words.len() * self.occupations.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(strata * per);
        for s in 0..strata {
            let mut picks = sample(&mut rng, na, per).into_vec();
            picks.sort_unstable();
            out.extend(picks.into_iter().map(|a| s * na + a));
        }
        out
    }
}

/// Convenience: materialized generation.
pub fn gen_bias_nli(
    gender_words: &[&str],
    occupations: &[&str],
    activities: &[Activity],
    articles: &ArticleRule,
) -> Result<Vec<BiasNliInstance>> {
    let g = BiasNliGenerator::new(
        gender_words.iter().map(|s| s.to_string()).collect(),
        occupations.iter().map(|s| s.to_string()).collect(),
        activities.to_vec(),
        articles.clone(),
    )?;
    Ok(g.iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m", alias = "male", alias = "M")]
    Male,
    #[serde(rename = "f", alias = "female", alias = "F")]
    Female,
}

impl Gender {
    pub fn parse(tag: &str) -> Option<Self> {
        match tag.trim().to_lowercase().as_str() {
            "m" | "male" => Some(Gender::Male),
            "f" | "female" => Some(Gender::Female),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "m",
            Gender::Female => "f",
        }
    }
}

/// The closed set of occupation labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    labels: Vec<String>,
}

impl ClassSet {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels }
    }

    pub fn bios() -> Self {
        Self::new(BIOS_PROFESSIONS.iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// A record as read from disk, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBiosRecord {
    pub text: String,
    pub profession: String,
    #[serde(default)]
    pub gender: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiosRecord {
    pub text: String,
    pub profession: String,
    pub gender: Gender,
}

impl BiosRecord {
    pub fn class_id(&self, classes: &ClassSet) -> usize {
        classes
            .index_of(&self.profession)
            .expect("validated records carry known professions")
    }
}

pub fn validate_bios(raw: Vec<RawBiosRecord>, classes: &ClassSet) -> Result<Vec<BiosRecord>> {
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if classes.index_of(&r.profession).is_none() {
                return Err(Error::UnknownProfession(r.profession));
            }
            let gender = r
                .gender
                .as_deref()
                .and_then(Gender::parse)
                .ok_or(Error::MissingGender(i))?;
            Ok(BiosRecord {
                text: r.text,
                profession: r.profession,
                gender,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stsb_unit_example() {
        let units = gen_bias_stsb(&["A {X} is walking"], &["nurse"], ("man", "woman")).unwrap();
        assert_eq!(units.len(), 1);
        let u = &units[0];
        assert_eq!(u.pair_male, ("A man is walking".into(), "A nurse is walking".into()));
        assert_eq!(u.pair_female, ("A woman is walking".into(), "A nurse is walking".into()));
    }

    #[test]
    fn stsb_counts_and_order() {
        let units = gen_bias_stsb(&["{X} runs", "The {X} sat"], &["a", "b", "c"], ("man", "woman")).unwrap();
        assert_eq!(units.len(), 6);
        assert_eq!(units[3].template_id, 1);
        assert_eq!(units[3].profession, "a");
        assert!(units.iter().enumerate().all(|(i, u)| u.unit_id == i));
    }

    #[test]
    fn stsb_slot_errors() {
        assert_eq!(
            gen_bias_stsb(&["{X} ok", "no slot"], &["p"], ("m", "f")).unwrap_err(),
            Error::MissingSlot(1)
        );
        assert_eq!(
            gen_bias_stsb(&["{X} and {X}"], &["p"], ("m", "f")).unwrap_err(),
            Error::MultipleSlots(0)
        );
    }

    #[test]
    fn nli_example_and_articles() {
        let acts = [Activity::new("ate", "bagel"), Activity::new("ate", "apple")];
        let out = gen_bias_nli(&["woman"], &["nurse"], &acts, &ArticleRule::new()).unwrap();
        assert_eq!(out[0].premise, "The woman ate a bagel");
        assert_eq!(out[0].hypothesis, "The nurse ate a bagel");
        assert_eq!(out[1].premise, "The woman ate an apple");

        let rule = ArticleRule::parse_exceptions("hour an\nuniversity a\n").unwrap();
        assert_eq!(rule.article("hour"), "an");
        assert_eq!(rule.article("university"), "a");
        assert_eq!(rule.article("egg"), "an");
    }

    #[test]
    fn nli_counts_and_sampling() {
        let acts: Vec<Activity> = (0..4).map(|i| Activity::new("ate", format!("food{i}"))).collect();
        let g = BiasNliGenerator::new(
            ["man", "woman"].map(String::from).to_vec(),
            ["nurse", "pilot", "chef"].map(String::from).to_vec(),
            acts,
            ArticleRule::new(),
        )
        .unwrap();
        assert_eq!(g.len(), 24);
        assert_eq!(g.iter().count(), 24);
        let s = g.stratified_sample(0.5, 9);
        assert_eq!(s.len(), 12);
        assert_eq!(s, g.stratified_sample(0.5, 9));
        // one index per (gender, occupation) stratum at tiny fractions
        assert_eq!(g.stratified_sample(0.01, 1).len(), 6);
    }

    #[test]
    fn bios_validation() {
        let classes = ClassSet::bios();
        assert_eq!(classes.len(), 28);
        let ok = alloc::vec![
            RawBiosRecord { text: "She is a nurse".into(), profession: "nurse".into(), gender: Some("f".into()) },
            RawBiosRecord { text: "He codes".into(), profession: "software_engineer".into(), gender: Some("m".into()) },
            RawBiosRecord { text: "They teach".into(), profession: "teacher".into(), gender: Some("F".into()) },
        ];
        assert_eq!(validate_bios(ok, &classes).unwrap().len(), 3);
        let bad = alloc::vec![RawBiosRecord { text: "x".into(), profession: "wizard".into(), gender: Some("m".into()) }];
        assert_eq!(validate_bios(bad, &classes).unwrap_err(), Error::UnknownProfession("wizard".into()));
        let nog = alloc::vec![RawBiosRecord { text: "x".into(), profession: "poet".into(), gender: None }];
        assert_eq!(validate_bios(nog, &classes).unwrap_err(), Error::MissingGender(0));
    }
}
