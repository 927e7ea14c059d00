//! The JSON report written for every training run, evaluation and sweep point.

use std::collections::BTreeMap;

use ptdebias_core::metrics::{BiosBias, Correlation, NliBias, StsbBias};
use ptdebias_core::train::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub type Metrics = BTreeMap<String, f64>;

/// Dev metric and bias probe after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub dev_metric: f64,
    pub bias: Option<f64>,
    pub task_loss: f64,
    pub contrastive_loss: f64,
}

impl From<&EpochRecord> for EpochPoint {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            dev_metric: r.dev_metric,
            bias: r.bias,
            task_loss: r.task_loss,
            contrastive_loss: r.contrastive_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub task: Metrics,
    pub bias: Metrics,
    pub series: Vec<EpochPoint>,
    /// Checkpoint directory relative to the run directory.
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneAudit {
    pub id: String,
    pub digest_before: String,
    pub digest_after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliSampleInfo {
    pub fraction: f64,
    pub seed: u64,
    pub full: bool,
    pub instances: usize,
    pub corpus_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub config_hash: String,
    pub label: String,
    pub task: String,
    pub method: String,
    /// Name of the metric in each epoch's `dev_metric`.
    pub dev_metric_name: String,
    /// Name of the metric in each epoch's `bias`.
    pub bias_probe_name: Option<String>,
    pub config: Option<ExperimentConfig>,
    pub backbone: BackboneAudit,
    pub seeds: Vec<SeedResult>,
    pub mean_task: Metrics,
    pub std_task: Metrics,
    pub mean_bias: Metrics,
    pub std_bias: Metrics,
    pub nli_sample: Option<NliSampleInfo>,
    pub warnings: Vec<String>,
}

/// Arithmetic mean and sample standard deviation (`n − 1`; zero for a
/// single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and std per key over the keys every seed reports.
pub fn aggregate<'a>(maps: impl Iterator<Item = &'a Metrics> + Clone) -> (Metrics, Metrics) {
    let mut keys: Option<Vec<&String>> = None;
    for m in maps.clone() {
        let ks: Vec<&String> = m.keys().collect();
        keys = Some(match keys {
            None => ks,
            Some(prev) => prev.into_iter().filter(|k| m.contains_key(*k)).collect(),
        });
    }
    let (mut mean, mut std) = (Metrics::new(), Metrics::new());
    for key in keys.unwrap_or_default() {
        let values: Vec<f64> = maps.clone().map(|m| m[key]).collect();
        let (mu, sd) = mean_std(&values);
        mean.insert(key.clone(), mu);
        std.insert(key.clone(), sd);
    }
    (mean, std)
}

impl BiasReport {
    /// Recomputes the means and standard deviations from the seed entries.
    pub fn finalize(&mut self) {
        (self.mean_task, self.std_task) = aggregate(self.seeds.iter().map(|s| &s.task));
        (self.mean_bias, self.std_bias) = aggregate(self.seeds.iter().map(|s| &s.bias));
    }

    /// Per-epoch mean over seeds, truncated to the shortest seed series.
    pub fn mean_series(&self) -> Vec<(usize, f64, Option<f64>)> {
        let len = self.seeds.iter().map(|s| s.series.len()).min().unwrap_or(0);
        (0..len)
            .map(|i| {
                let points: Vec<&EpochPoint> = self.seeds.iter().map(|s| &s.series[i]).collect();
                let n = points.len() as f64;
                let dev = points.iter().map(|p| p.dev_metric).sum::<f64>() / n;
                let bias = points
                    .iter()
                    .map(|p| p.bias)
                    .collect::<Option<Vec<f64>>>()
                    .map(|b| b.iter().sum::<f64>() / n);
                (points[0].epoch, dev, bias)
            })
            .collect()
    }
}

fn threshold_key(prefix: &str, t: f64) -> String {
    format!("{prefix}{t}")
}

pub fn stsb_bias_metrics(b: &StsbBias) -> Metrics {
    let mut m = Metrics::new();
    m.insert("avg_abs_diff".into(), b.avg_abs_diff);
    for f in &b.frac_gt {
        m.insert(threshold_key("frac>", f.threshold), f.fraction);
    }
    m
}

pub fn correlation_metrics(c: &Correlation) -> Metrics {
    Metrics::from([("pearson".into(), c.pearson), ("spearman".into(), c.spearman)])
}

pub fn nli_bias_metrics(b: &NliBias) -> Metrics {
    let mut m = Metrics::new();
    m.insert("net_neutral".into(), b.net_neutral);
    m.insert("fraction_neutral".into(), b.fraction_neutral);
    for f in &b.threshold {
        m.insert(threshold_key("T:", f.threshold), f.fraction);
    }
    m
}

pub fn bios_bias_metrics(b: &BiosBias) -> Metrics {
    Metrics::from([
        ("gap_tpr".into(), b.gap_tpr),
        ("gap_rms".into(), b.gap_rms),
        ("accuracy".into(), b.accuracy),
        ("accuracy_male".into(), b.per_gender_accuracy.male),
        ("accuracy_female".into(), b.per_gender_accuracy.female),
    ])
}

/// Markdown table with one row per report, the mean ± std of the listed
/// metrics as columns.
pub fn comparison_table(reports: &[BiasReport]) -> String {
    let mut columns: Vec<String> = Vec::new();
    for r in reports {
        for k in r.mean_task.keys().chain(r.mean_bias.keys()) {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let mut out = format!("| run | {} |\n|---|{}\n", columns.join(" | "), "---|".repeat(columns.len()));
    for r in reports {
        let cells: Vec<String> = columns
            .iter()
            .map(|k| {
                let pick = |mean: &Metrics, std: &Metrics| {
                    mean.get(k).map(|m| format!("{m:.4} ± {:.4}", std.get(k).copied().unwrap_or(0.0)))
                };
                pick(&r.mean_task, &r.std_task)
                    .or_else(|| pick(&r.mean_bias, &r.std_bias))
                    .unwrap_or_else(|| "-".into())
            })
            .collect();
        out.push_str(&format!("| {} | {} |\n", r.label, cells.join(" | ")));
    }
    out
}
