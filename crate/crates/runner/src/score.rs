//! Metric-only mode: bias metrics from an external predictions file and the
//! generated corpus it was produced on.

use std::collections::HashMap;
use std::path::Path;

use ptdebias_core::benchmark::ClassSet;
use ptdebias_core::math::softmax;
use ptdebias_core::metrics::{
    bios_bias, nli_bias, stsb_bias, BiosPrediction, NliPrediction, ScoredStsbUnit, DEFAULT_NLI_THRESHOLDS,
    DEFAULT_STSB_THRESHOLDS,
};

use crate::config::hex_digest;
use crate::error::{IoContext, Result, RunnerError};
use crate::experiment::Benchmark;
use crate::io::{load_bios, read_nli_corpus, read_predictions, read_stsb_corpus};
use crate::report::{
    bios_bias_metrics, nli_bias_metrics, stsb_bias_metrics, BackboneAudit, BiasReport, Metrics, SeedResult,
};

fn bad(path: &Path, message: String) -> RunnerError {
    RunnerError::Parse {
        path: path.to_path_buf(),
        message,
    }
}

fn lookup<'a>(
    preds: &'a HashMap<String, Vec<f64>>,
    id: &str,
    width: Option<usize>,
    path: &Path,
) -> Result<&'a [f64]> {
    let v = preds
        .get(id)
        .ok_or_else(|| bad(path, format!("no prediction for instance `{id}`")))?;
    if let Some(w) = width {
        if v.len() != w {
            return Err(bad(path, format!("instance `{id}` has {} values, expected {w}", v.len())));
        }
    }
    Ok(v)
}

/// Prediction rows by benchmark:
/// - Bias-STS-B: `unit_id  score_male  score_female`
/// - Bias-NLI: `index  p_entailment  p_neutral  p_contradiction`; rows that
///   do not sum to one are treated as logits
/// - Bios: `index  class_logits…` or `index  class_id`
pub fn score_predictions(
    benchmark: Benchmark,
    corpus: &Path,
    predictions: &Path,
    classes: Option<&ClassSet>,
) -> Result<BiasReport> {
    let rows = read_predictions(predictions)?;
    let preds: HashMap<String, Vec<f64>> = rows.into_iter().collect();
    let mut warnings = Vec::new();
    let bias: Metrics = match benchmark {
        Benchmark::BiasStsb => {
            let units = read_stsb_corpus(corpus)?;
            let scored = units
                .iter()
                .map(|u| {
                    let v = lookup(&preds, &u.unit_id.to_string(), Some(2), predictions)?;
                    Ok(ScoredStsbUnit {
                        unit_id: u.unit_id,
                        score_male: v[0],
                        score_female: v[1],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stsb_bias_metrics(&stsb_bias(&scored, &DEFAULT_STSB_THRESHOLDS)?)
        }
        Benchmark::BiasNli => {
            let n = read_nli_corpus(corpus)?.len();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let v = lookup(&preds, &i.to_string(), Some(3), predictions)?;
                let sum: f64 = v.iter().sum();
                let p = if v.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 1e-6 {
                    v.to_vec()
                } else {
                    softmax(v)
                };
                out.push(NliPrediction::from_probs([p[0], p[1], p[2]]));
            }
            nli_bias_metrics(&nli_bias(&out, &DEFAULT_NLI_THRESHOLDS)?)
        }
        Benchmark::Bios => {
            let classes = classes.cloned().unwrap_or_else(ClassSet::bios);
            let records = load_bios(corpus, &classes)?;
            let mut out = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                let v = lookup(&preds, &i.to_string(), None, predictions)?;
                let class = match v.len() {
                    1 => v[0] as usize,
                    n if n == classes.len() => {
                        let mut best = 0;
                        for (j, &x) in v.iter().enumerate() {
                            if x > v[best] {
                                best = j;
                            }
                        }
                        best
                    }
                    n => return Err(bad(predictions, format!("row {i} has {n} values"))),
                };
                let predicted = classes
                    .label(class)
                    .ok_or_else(|| bad(predictions, format!("row {i}: class {class} out of range")))?;
                out.push(BiosPrediction {
                    predicted_profession: predicted.to_string(),
                    gold_profession: r.profession.clone(),
                    gender: r.gender,
                });
            }
            let b = bios_bias(&out)?;
            warnings.extend(
                b.excluded_occupations
                    .iter()
                    .map(|o| format!("occupation `{o}` lacks one gender; left out of gap_rms")),
            );
            bios_bias_metrics(&b)
        }
    };
    let pred_bytes = std::fs::read(predictions).at(predictions)?;
    let mut report = BiasReport {
        config_hash: hex_digest(&pred_bytes),
        label: predictions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "predictions".into()),
        task: benchmark.as_str().to_string(),
        method: "external".into(),
        dev_metric_name: String::new(),
        bias_probe_name: None,
        config: None,
        backbone: BackboneAudit {
            id: "external".into(),
            digest_before: String::new(),
            digest_after: String::new(),
        },
        seeds: vec![SeedResult {
            seed: 0,
            best_epoch: 0,
            task: Metrics::new(),
            bias,
            series: Vec::new(),
            checkpoint: None,
        }],
        mean_task: Metrics::new(),
        std_task: Metrics::new(),
        mean_bias: Metrics::new(),
        std_bias: Metrics::new(),
        nli_sample: None,
        warnings,
    };
    report.finalize();
    Ok(report)
}
