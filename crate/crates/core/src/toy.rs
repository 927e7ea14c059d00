//! Gender-skewed synthetic sentence-similarity task.
//!
//! Every example pairs a subject sentence with a second sentence describing
//! the same activity. The gold score is driven mostly by the activity and the
//! second subject. Gender enters twice: male subjects co-occur more often with
//! high-scoring activities, and a small shift raises their scores over their
//! female counterparts. A model trained on this data picks the shift up, which the
//! Bias-STS-B style probe built from [`ToyTask::bias_templates`] exposes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::benchmark::SLOT;
use crate::lexicon::{Label, LabeledText, TextUnit};

/// (male, female) subjects; all appear in the default gender lexicon.
pub const GENDERED_SUBJECTS: [(&str, &str); 6] = [
    ("man", "woman"),
    ("boy", "girl"),
    ("father", "mother"),
    ("gentleman", "lady"),
    ("husband", "wife"),
    ("king", "queen"),
];

pub const NEUTRAL_SUBJECTS: [&str; 4] = ["person", "child", "friend", "student"];

pub const PROFESSIONS: [&str; 12] = [
    "nurse",
    "engineer",
    "doctor",
    "teacher",
    "pilot",
    "chef",
    "lawyer",
    "farmer",
    "dancer",
    "plumber",
    "secretary",
    "carpenter",
];

/// Activity templates with their score offsets.
pub const ACTIVITIES: [(&str, f64); 10] = [
    ("A {X} is walking", 1.6),
    ("The {X} is cooking dinner", 1.2),
    ("A {X} is playing the piano", 0.8),
    ("The {X} is reading a book", 0.4),
    ("A {X} is riding a horse", 0.0),
    ("The {X} is painting a wall", -0.4),
    ("A {X} is swimming in a lake", -0.8),
    ("The {X} is writing a letter", -1.2),
    ("A {X} is driving a car", -1.6),
    ("The {X} is slicing an onion", 2.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskConfig {
    pub train_size: usize,
    pub dev_size: usize,
    /// Score shift added for male subjects and subtracted for female ones.
    pub gender_shift: f64,
    /// Probability that a gendered subject is paired with an activity from
    /// its stereotyped half: high-scoring for male subjects, low-scoring for
    /// female ones. 0.5 means no skew.
    pub activity_skew: f64,
    /// Standard deviation of the label noise.
    pub noise: f64,
    /// Share of examples whose first subject is gendered.
    pub gendered_share: f64,
    pub seed: u64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            train_size: 480,
            dev_size: 160,
            gender_shift: 0.25,
            activity_skew: 0.75,
            noise: 0.15,
            gendered_share: 0.6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub train: Vec<LabeledText>,
    pub dev: Vec<LabeledText>,
    pub bias_templates: Vec<String>,
    pub bias_professions: Vec<String>,
    pub gender_terms: (String, String),
}

fn profession_offset(index: usize) -> f64 {
    // spread evenly over [-0.55, 0.55]
    let n = PROFESSIONS.len() as f64 - 1.0;
    -0.55 + 1.1 * index as f64 / n
}

fn skewed_activity<R: Rng>(cfg: &ToyTaskConfig, male: bool, rng: &mut R) -> (&'static str, f64) {
    let high = rng.gen::<f64>() < cfg.activity_skew;
    let pool: Vec<&(&str, f64)> = ACTIVITIES.iter().filter(|(_, o)| (*o > 0.0) == (high == male)).collect();
    *pool[rng.gen_range(0..pool.len())]
}

fn sample_example<R: Rng>(cfg: &ToyTaskConfig, noise: &Normal<f64>, rng: &mut R) -> LabeledText {
    let ((template, act), first, shift) = if rng.gen::<f64>() < cfg.gendered_share {
        let (m, f) = GENDERED_SUBJECTS[rng.gen_range(0..GENDERED_SUBJECTS.len())];
        let male = rng.gen::<bool>();
        let activity = skewed_activity(cfg, male, rng);
        if male {
            (activity, m, cfg.gender_shift)
        } else {
            (activity, f, -cfg.gender_shift)
        }
    } else {
        let activity = ACTIVITIES[rng.gen_range(0..ACTIVITIES.len())];
        (activity, *NEUTRAL_SUBJECTS.choose(rng).unwrap_or(&"person"), 0.0)
    };
    let p = rng.gen_range(0..PROFESSIONS.len());
    let score = 2.5 + act + profession_offset(p) + shift + noise.sample(rng);
    LabeledText::new(
        TextUnit::pair(template.replace(SLOT, first), template.replace(SLOT, PROFESSIONS[p])),
        Label::Score(score.clamp(0.0, 5.0)),
    )
}

pub fn generate_toy_task(cfg: &ToyTaskConfig) -> ToyTask {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).unwrap_or_else(|_| Normal::new(0.0, 0.0).unwrap());
    let train = (0..cfg.train_size).map(|_| sample_example(cfg, &noise, &mut rng)).collect();
    let dev = (0..cfg.dev_size).map(|_| sample_example(cfg, &noise, &mut rng)).collect();
    ToyTask {
        train,
        dev,
        bias_templates: ACTIVITIES.iter().map(|(t, _)| t.to_string()).collect(),
        bias_professions: PROFESSIONS.iter().map(|p| p.to_string()).collect(),
        gender_terms: ("man".into(), "woman".into()),
    }
}

/// Human-readable one-line summary, handy in logs.
pub fn describe(task: &ToyTask) -> String {
    format!(
        "toy-synthetic: {} train, {} dev, {} probe units",
        task.train.len(),
        task.dev.len(),
        task.bias_templates.len() * task.bias_professions.len()
    )
}
