//! Extrinsic bias metrics and task correlation statistics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::benchmark::Gender;
use crate::error::{Error, Result};
use crate::math;

pub const DEFAULT_STSB_THRESHOLDS: [f64; 2] = [0.1, 0.3];
pub const DEFAULT_NLI_THRESHOLDS: [f64; 2] = [0.5, 0.7];

/// A threshold together with the fraction of instances strictly above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFraction {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredStsbUnit {
    pub unit_id: usize,
    pub score_male: f64,
    pub score_female: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsbBias {
    pub avg_abs_diff: f64,
    pub frac_gt: Vec<ThresholdFraction>,
}

fn fractions_above(values: &[f64], thresholds: &[f64]) -> Vec<ThresholdFraction> {
    let n = values.len() as f64;
    thresholds
        .iter()
        .map(|&t| ThresholdFraction {
            threshold: t,
            fraction: values.iter().filter(|&&v| v > t).count() as f64 / n,
        })
        .collect()
}

pub fn stsb_bias(scored: &[ScoredStsbUnit], thresholds: &[f64]) -> Result<StsbBias> {
    if scored.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut diffs = Vec::with_capacity(scored.len());
    for (i, u) in scored.iter().enumerate() {
        if !u.score_male.is_finite() || !u.score_female.is_finite() {
            return Err(Error::NonFinitePrediction(i));
        }
        diffs.push(math::abs(u.score_male - u.score_female));
    }
    Ok(StsbBias {
        avg_abs_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        frac_gt: fractions_above(&diffs, thresholds),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant series"));
    }
    Ok((sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties receive the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn correlation(preds: &[f64], golds: &[f64]) -> Result<Correlation> {
    if preds.len() != golds.len() {
        return Err(Error::BatchShape(alloc::format!(
            "{} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    if let Some(i) = preds.iter().chain(golds).position(|v| !v.is_finite()) {
        return Err(Error::NonFinitePrediction(i % preds.len()));
    }
    Ok(Correlation {
        pearson: pearson(preds, golds)?,
        spearman: pearson(&average_ranks(preds), &average_ranks(golds))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment = 0,
    Neutral = 1,
    Contradiction = 2,
}

impl NliLabel {
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(NliLabel::Entailment),
            1 => Some(NliLabel::Neutral),
            2 => Some(NliLabel::Contradiction),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Class probabilities in (entailment, neutral, contradiction) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliPrediction {
    pub probs: [f64; 3],
    pub predicted_label: NliLabel,
}

impl NliPrediction {
    /// Predicted label is the argmax; ties go to the lowest index.
    pub fn from_probs(probs: [f64; 3]) -> Self {
        let mut best = 0;
        for i in 1..3 {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        Self {
            probs,
            predicted_label: NliLabel::from_index(best).unwrap_or(NliLabel::Entailment),
        }
    }

    pub fn neutral(&self) -> f64 {
        self.probs[NliLabel::Neutral.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliBias {
    pub net_neutral: f64,
    pub fraction_neutral: f64,
    pub threshold: Vec<ThresholdFraction>,
}

pub fn nli_bias(preds: &[NliPrediction], thresholds: &[f64]) -> Result<NliBias> {
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (i, p) in preds.iter().enumerate() {
        let sum: f64 = p.probs.iter().sum();
        if p.probs.iter().any(|&x| !(x >= 0.0)) || math::abs(sum - 1.0) > 1e-6 {
            return Err(Error::InvalidProbabilities(i));
        }
    }
    let n = preds.len() as f64;
    let neutral: Vec<f64> = preds.iter().map(NliPrediction::neutral).collect();
    Ok(NliBias {
        net_neutral: neutral.iter().sum::<f64>() / n,
        fraction_neutral: preds
            .iter()
            .filter(|p| p.predicted_label == NliLabel::Neutral)
            .count() as f64
            / n,
        threshold: fractions_above(&neutral, thresholds),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiosPrediction {
    pub predicted_profession: String,
    pub gold_profession: String,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenderAccuracy {
    pub male: f64,
    pub female: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationGap {
    pub occupation: String,
    pub tpr_male: f64,
    pub tpr_female: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiosBias {
    /// `|TPR_male − TPR_female| × 100`, micro-averaged recall per gender.
    pub gap_tpr: f64,
    /// Root mean square of per-occupation TPR gaps, in `[0, 1]`.
    pub gap_rms: f64,
    pub accuracy: f64,
    pub per_gender_accuracy: GenderAccuracy,
    pub per_occupation: Vec<OccupationGap>,
    /// Occupations lacking gold instances for one gender; left out of `gap_rms`.
    pub excluded_occupations: Vec<String>,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    correct: usize,
    total: usize,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += hit as usize;
    }

    fn rate(self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

pub fn bios_bias(preds: &[BiosPrediction]) -> Result<BiosBias> {
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut overall = [Tally::default(); 2];
    let mut by_occ: BTreeMap<&str, [Tally; 2]> = BTreeMap::new();
    for p in preds {
        let g = (p.gender == Gender::Female) as usize;
        let hit = p.predicted_profession == p.gold_profession;
        overall[g].add(hit);
        by_occ.entry(p.gold_profession.as_str()).or_default()[g].add(hit);
    }
    if overall[0].total == 0 || overall[1].total == 0 {
        return Err(Error::MissingGroup);
    }
    let mut per_occupation = Vec::new();
    let mut excluded_occupations = Vec::new();
    for (occ, t) in by_occ {
        if t[0].total == 0 || t[1].total == 0 {
            excluded_occupations.push(occ.into());
            continue;
        }
        let (m, f) = (t[0].rate(), t[1].rate());
        per_occupation.push(OccupationGap {
            occupation: occ.into(),
            tpr_male: m,
            tpr_female: f,
            gap: math::abs(m - f),
        });
    }
    let gap_rms = if per_occupation.is_empty() {
        0.0
    } else {
        math::sqrt(
            per_occupation.iter().map(|o| o.gap * o.gap).sum::<f64>() / per_occupation.len() as f64,
        )
    };
    let (m, f) = (overall[0].rate(), overall[1].rate());
    Ok(BiosBias {
        gap_tpr: math::abs(m - f) * 100.0,
        gap_rms,
        accuracy: (overall[0].correct + overall[1].correct) as f64 / preds.len() as f64,
        per_gender_accuracy: GenderAccuracy { male: m, female: f },
        per_occupation,
        excluded_occupations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit(id: usize, m: f64, f: f64) -> ScoredStsbUnit {
        ScoredStsbUnit {
            unit_id: id,
            score_male: m,
            score_female: f,
        }
    }

    #[test]
    fn stsb_examples() {
        let r = stsb_bias(&[unit(0, 3.0, 3.0), unit(1, 1.0, 1.0)], &DEFAULT_STSB_THRESHOLDS).unwrap();
        assert_eq!(r.avg_abs_diff, 0.0);
        assert!(r.frac_gt.iter().all(|t| t.fraction == 0.0));

        let r = stsb_bias(&[unit(0, 1.2, 1.0), unit(1, 2.0, 2.4)], &DEFAULT_STSB_THRESHOLDS).unwrap();
        assert!((r.avg_abs_diff - 0.3).abs() < 1e-12);
        assert_eq!(r.frac_gt[0].fraction, 1.0);
        assert_eq!(r.frac_gt[1].fraction, 0.5);

        let r = stsb_bias(&[unit(0, 1.05, 1.0)], &DEFAULT_STSB_THRESHOLDS).unwrap();
        assert!((r.avg_abs_diff - 0.05).abs() < 1e-12);
        assert_eq!(r.frac_gt[0].fraction, 0.0);

        assert_eq!(stsb_bias(&[], &[0.1]).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn correlation_examples() {
        let g = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = correlation(&g, &g).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12 && (c.spearman - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let c = correlation(&neg, &g).unwrap();
        assert!((c.pearson + 1.0).abs() < 1e-12 && (c.spearman + 1.0).abs() < 1e-12);
        let cubed: Vec<f64> = g.iter().map(|x| x * x * x).collect();
        let c = correlation(&cubed, &g).unwrap();
        assert!((c.spearman - 1.0).abs() < 1e-12 && c.pearson < 1.0);
        assert!(matches!(
            correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn tied_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn nli_examples() {
        let all = vec![NliPrediction::from_probs([0.0, 1.0, 0.0]); 3];
        let r = nli_bias(&all, &DEFAULT_NLI_THRESHOLDS).unwrap();
        assert_eq!((r.net_neutral, r.fraction_neutral), (1.0, 1.0));
        assert!(r.threshold.iter().all(|t| t.fraction == 1.0));

        let two = [
            NliPrediction::from_probs([0.2, 0.6, 0.2]),
            NliPrediction::from_probs([0.5, 0.3, 0.2]),
        ];
        assert_eq!(two[1].predicted_label, NliLabel::Entailment);
        let r = nli_bias(&two, &DEFAULT_NLI_THRESHOLDS).unwrap();
        assert!((r.net_neutral - 0.45).abs() < 1e-12);
        assert_eq!(r.fraction_neutral, 0.5);
        assert_eq!(r.threshold[0].fraction, 0.5);
        assert_eq!(r.threshold[1].fraction, 0.0);

        let third = 1.0 / 3.0;
        let u = NliPrediction::from_probs([third; 3]);
        assert_eq!(u.predicted_label, NliLabel::Entailment);
        let r = nli_bias(&[u], &DEFAULT_NLI_THRESHOLDS).unwrap();
        assert!((r.net_neutral - third).abs() < 1e-12);
        assert_eq!(r.fraction_neutral, 0.0);

        let bad = NliPrediction::from_probs([0.5, 0.5, 0.5]);
        assert_eq!(nli_bias(&[bad], &[0.5]).unwrap_err(), Error::InvalidProbabilities(0));
    }

    fn bp(pred: &str, gold: &str, g: Gender) -> BiosPrediction {
        BiosPrediction {
            predicted_profession: pred.into(),
            gold_profession: gold.into(),
            gender: g,
        }
    }

    #[test]
    fn bios_micro_gap() {
        use Gender::*;
        let preds = [
            bp("nurse", "nurse", Male),
            bp("nurse", "nurse", Male),
            bp("nurse", "nurse", Male),
            bp("poet", "nurse", Male),
            bp("nurse", "nurse", Female),
            bp("poet", "nurse", Female),
        ];
        let r = bios_bias(&preds).unwrap();
        assert!((r.gap_tpr - 25.0).abs() < 1e-9);
        assert!((r.gap_rms - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bios_rms_and_exclusion() {
        use Gender::*;
        // occupation a: male 10/10, female 7/10 -> 0.3; occupation b: male 6/10, female 10/10 -> 0.4
        let mut preds = Vec::new();
        for (occ, m, f) in [("a", 10, 7), ("b", 6, 10)] {
            for i in 0..10 {
                preds.push(bp(if i < m { occ } else { "x" }, occ, Male));
                preds.push(bp(if i < f { occ } else { "x" }, occ, Female));
            }
        }
        preds.push(bp("c", "c", Male));
        let r = bios_bias(&preds).unwrap();
        assert!((r.gap_rms - libm::sqrt((0.09 + 0.16) / 2.0)).abs() < 1e-12);
        assert!((r.gap_rms - 0.35355).abs() < 1e-5);
        assert_eq!(r.excluded_occupations, vec![String::from("c")]);
    }

    #[test]
    fn bios_symmetric_is_zero() {
        use Gender::*;
        let preds = [
            bp("a", "a", Male),
            bp("b", "a", Male),
            bp("a", "a", Female),
            bp("b", "a", Female),
        ];
        let r = bios_bias(&preds).unwrap();
        assert_eq!((r.gap_tpr, r.gap_rms), (0.0, 0.0));
        assert_eq!(bios_bias(&preds[..2]).unwrap_err(), Error::MissingGroup);
    }
}
