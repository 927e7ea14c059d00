//! Training objectives.
//!
//! The contrastive losses all share one shape: each anchor is scored against a
//! candidate set by temperature-scaled cosine similarity of `p ⊕ h` vectors
//! (`p` the prompt representation, possibly empty), and the loss is the
//! cross-entropy of picking the positive candidate. Every loss comes with an
//! analytic gradient with respect to `p` and each `h`, which the trainer feeds
//! back through the encoder tape.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::TaskKind;
use crate::lexicon::Label;
use crate::math;

/// Temperature used unless configured otherwise.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;
/// Weight of the contrastive term unless configured otherwise.
pub const DEFAULT_ALPHA: f64 = 1.0;

/// `xᵀy / (‖x‖‖y‖)`
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::BatchShape(alloc::format!(
            "cosine of vectors with {} and {} entries",
            x.len(),
            y.len()
        )));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = math::sqrt(x.iter().map(|a| a * a).sum());
    let ny = math::sqrt(y.iter().map(|a| a * a).sum());
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// Cosine and its gradients with respect to both arguments.
fn cosine_with_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx2: f64 = x.iter().map(|a| a * a).sum();
    let ny2: f64 = y.iter().map(|a| a * a).sum();
    if nx2 == 0.0 || ny2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let (nx, ny) = (math::sqrt(nx2), math::sqrt(ny2));
    let s = dot / (nx * ny);
    let dx = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| b / (nx * ny) - s * a / nx2)
        .collect();
    let dy = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| a / (nx * ny) - s * b / ny2)
        .collect();
    Ok((s, dx, dy))
}

/// One cross-entropy term: `anchor` must pick `positive` among `candidates`
/// (indices into a shared vector table; `positive` must be in `candidates`).
#[derive(Debug, Clone)]
struct Term {
    anchor: usize,
    positive: usize,
    candidates: Vec<usize>,
}

/// Mean InfoNCE loss over `terms`; adds `weight ×` its gradient into `grads`.
fn info_nce(
    table: &[Vec<f64>],
    terms: &[Term],
    temperature: f64,
    weight: f64,
    grads: &mut [Vec<f64>],
) -> Result<f64> {
    if terms.is_empty() {
        return Ok(0.0);
    }
    let n = terms.len() as f64;
    let mut total = 0.0;
    for term in terms {
        let a = &table[term.anchor];
        let mut logits = Vec::with_capacity(term.candidates.len());
        let mut partials = Vec::with_capacity(term.candidates.len());
        for &c in &term.candidates {
            let (s, da, dc) = cosine_with_grad(a, &table[c])?;
            logits.push(s / temperature);
            partials.push((da, dc));
        }
        let pos = term
            .candidates
            .iter()
            .position(|&c| c == term.positive)
            .expect("positive must be a candidate");
        total += math::log_sum_exp(&logits) - logits[pos];

        let probs = math::softmax(&logits);
        for (k, &c) in term.candidates.iter().enumerate() {
            let target = if k == pos { 1.0 } else { 0.0 };
            let g = weight * (probs[k] - target) / (temperature * n);
            if g == 0.0 {
                continue;
            }
            let (da, dc) = &partials[k];
            for (o, d) in grads[term.anchor].iter_mut().zip(da) {
                *o += g * d;
            }
            for (o, d) in grads[c].iter_mut().zip(dc) {
                *o += g * d;
            }
        }
    }
    Ok(total / n)
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(t))
    }
}

fn check_dims(groups: &[&[Vec<f64>]]) -> Result<()> {
    let mut dim = None;
    for group in groups {
        for v in group.iter() {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::BatchShape(alloc::format!(
                    "representation of dim {} in a batch of dim {d}",
                    v.len()
                )));
            }
        }
    }
    Ok(())
}

fn concat(prompt: &[f64], h: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(prompt.len() + h.len());
    v.extend_from_slice(prompt);
    v.extend_from_slice(h);
    v
}

/// Gradient of a contrastive loss with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    /// Empty when the prompt representation is empty.
    pub d_prompt: Vec<f64>,
    /// One gradient per input group, in the order the loss documents.
    pub d_groups: Vec<Vec<Vec<f64>>>,
}

/// Builds the `p ⊕ h` table for several groups and splits gradients back.
struct Table {
    prompt_dim: usize,
    offsets: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

impl Table {
    fn new(prompt: &[f64], groups: &[&[Vec<f64>]]) -> Self {
        let mut offsets = Vec::with_capacity(groups.len());
        let mut vectors = Vec::new();
        for g in groups {
            offsets.push(vectors.len());
            vectors.extend(g.iter().map(|h| concat(prompt, h)));
        }
        Self {
            prompt_dim: prompt.len(),
            offsets,
            vectors,
        }
    }

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| vec![0.0; v.len()]).collect()
    }

    fn split(&self, loss: f64, grads: Vec<Vec<f64>>, sizes: &[usize]) -> ContrastiveGrad {
        let mut d_prompt = vec![0.0; self.prompt_dim];
        for g in &grads {
            for (o, v) in d_prompt.iter_mut().zip(&g[..self.prompt_dim]) {
                *o += v;
            }
        }
        let d_groups = self
            .offsets
            .iter()
            .zip(sizes)
            .map(|(&off, &n)| {
                grads[off..off + n]
                    .iter()
                    .map(|g| g[self.prompt_dim..].to_vec())
                    .collect()
            })
            .collect();
        ContrastiveGrad {
            loss,
            d_prompt,
            d_groups,
        }
    }
}

/// Anchors `h_i`, counterparts `h'_i`, prompt representation `p` and a
/// temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub prompt: Vec<f64>,
    pub anchors: Vec<Vec<f64>>,
    pub counterparts: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(
        prompt: Vec<f64>,
        anchors: Vec<Vec<f64>>,
        counterparts: Vec<Vec<f64>>,
        temperature: f64,
    ) -> Result<Self> {
        let batch = Self {
            prompt,
            anchors,
            counterparts,
            temperature,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if self.anchors.len() != self.counterparts.len() {
            return Err(Error::BatchShape(alloc::format!(
                "{} anchors but {} counterparts",
                self.anchors.len(),
                self.counterparts.len()
            )));
        }
        check_dims(&[&self.anchors, &self.counterparts])
    }
}

/// Counterfactual contrastive loss: anchor `p ⊕ h_i` must pick `p ⊕ h'_i`
/// among all counterparts `p ⊕ h'_j` of the batch. With `symmetric`, the
/// reverse direction (counterpart anchoring against all anchors) is averaged
/// in. Empty batches have zero loss.
///
/// `d_groups` = `[d anchors, d counterparts]`.
pub fn contrastive_loss_with_grad(batch: &ContrastiveBatch, symmetric: bool) -> Result<ContrastiveGrad> {
    batch.validate()?;
    let n = batch.len();
    let table = Table::new(&batch.prompt, &[&batch.anchors, &batch.counterparts]);
    let mut grads = table.zero_grads();
    let forward: Vec<Term> = (0..n)
        .map(|i| Term {
            anchor: i,
            positive: n + i,
            candidates: (n..2 * n).collect(),
        })
        .collect();
    let loss = if symmetric {
        let backward: Vec<Term> = (0..n)
            .map(|i| Term {
                anchor: n + i,
                positive: i,
                candidates: (0..n).collect(),
            })
            .collect();
        0.5 * info_nce(&table.vectors, &forward, batch.temperature, 0.5, &mut grads)?
            + 0.5 * info_nce(&table.vectors, &backward, batch.temperature, 0.5, &mut grads)?
    } else {
        info_nce(&table.vectors, &forward, batch.temperature, 1.0, &mut grads)?
    };
    Ok(table.split(loss, grads, &[n, n]))
}

pub fn contrastive_loss(batch: &ContrastiveBatch) -> Result<f64> {
    contrastive_loss_with_grad(batch, false).map(|g| g.loss)
}

/// Dropout-noise contrastive loss: two encodings of the same inputs under
/// independent dropout draws are the positive pairs. Same functional form as
/// [`contrastive_loss`] with `(h^z_i, h^z'_i)` in place of `(h_i, h'_i)`.
pub fn unsupervised_contrastive_loss_with_grad(
    prompt: &[f64],
    first_view: &[Vec<f64>],
    second_view: &[Vec<f64>],
    temperature: f64,
) -> Result<ContrastiveGrad> {
    let batch = ContrastiveBatch::new(
        prompt.to_vec(),
        first_view.to_vec(),
        second_view.to_vec(),
        temperature,
    )?;
    contrastive_loss_with_grad(&batch, false)
}

pub fn unsupervised_contrastive_loss(
    prompt: &[f64],
    first_view: &[Vec<f64>],
    second_view: &[Vec<f64>],
    temperature: f64,
) -> Result<f64> {
    unsupervised_contrastive_loss_with_grad(prompt, first_view, second_view, temperature).map(|g| g.loss)
}

/// Inter-association loss for sentence pairs. For each `i`, first sentence
/// `s_i1` must pick its own second sentence `s_i2` against every other
/// in-batch `s_j2` plus the counterfactual `s'_i2`; then, in the other
/// direction, `s_i2` must pick `s_i1` against every in-batch `s_j1`. The two
/// directions are summed.
///
/// `d_groups` = `[d first, d second, d second_augmented]`.
pub fn pairwise_entailment_contrastive_loss_with_grad(
    prompt: &[f64],
    first: &[Vec<f64>],
    second: &[Vec<f64>],
    second_augmented: &[Vec<f64>],
    temperature: f64,
) -> Result<ContrastiveGrad> {
    check_temperature(temperature)?;
    let n = first.len();
    if second.len() != n || second_augmented.len() != n {
        return Err(Error::BatchShape(alloc::format!(
            "pairwise loss needs equal lengths, got {n}/{}/{}",
            second.len(),
            second_augmented.len()
        )));
    }
    check_dims(&[first, second, second_augmented])?;
    let table = Table::new(prompt, &[first, second, second_augmented]);
    let mut grads = table.zero_grads();
    let forward: Vec<Term> = (0..n)
        .map(|i| {
            let mut candidates: Vec<usize> = (n..2 * n).collect();
            candidates.push(2 * n + i);
            Term {
                anchor: i,
                positive: n + i,
                candidates,
            }
        })
        .collect();
    let backward: Vec<Term> = (0..n)
        .map(|i| Term {
            anchor: n + i,
            positive: i,
            candidates: (0..n).collect(),
        })
        .collect();
    let loss = info_nce(&table.vectors, &forward, temperature, 1.0, &mut grads)?
        + info_nce(&table.vectors, &backward, temperature, 1.0, &mut grads)?;
    Ok(table.split(loss, grads, &[n, n, n]))
}

pub fn pairwise_entailment_contrastive_loss(
    prompt: &[f64],
    first: &[Vec<f64>],
    second: &[Vec<f64>],
    second_augmented: &[Vec<f64>],
    temperature: f64,
) -> Result<f64> {
    pairwise_entailment_contrastive_loss_with_grad(prompt, first, second, second_augmented, temperature)
        .map(|g| g.loss)
}

fn check_predictions(predictions: &[Vec<f64>], labels: &[Label], kind: TaskKind) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::BatchShape(alloc::format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (i, (p, l)) in predictions.iter().zip(labels).enumerate() {
        if p.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinitePrediction(i));
        }
        if p.len() != kind.outputs() {
            return Err(Error::BatchShape(alloc::format!(
                "prediction {i} has {} outputs, task has {}",
                p.len(),
                kind.outputs()
            )));
        }
        match (kind, l) {
            (TaskKind::Regression, Label::Score(_)) => {}
            (TaskKind::Classification { num_classes }, Label::Class(c)) => {
                if *c >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: *c,
                        classes: num_classes,
                    });
                }
            }
            _ => return Err(Error::LabelKind),
        }
    }
    Ok(())
}

/// Task loss on model outputs: mean squared error for regression (one output
/// per example) and mean cross-entropy for classification, where each
/// prediction is a probability distribution over classes.
pub fn task_loss(predictions: &[Vec<f64>], labels: &[Label], kind: TaskKind) -> Result<f64> {
    check_predictions(predictions, labels, kind)?;
    let n = predictions.len() as f64;
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| match *l {
            Label::Score(y) => (p[0] - y) * (p[0] - y),
            Label::Class(c) => -math::ln(p[c]),
        })
        .sum();
    Ok(total / n)
}

/// Task loss on raw head outputs (logits for classification) and its gradient
/// with respect to those outputs.
pub fn task_loss_from_logits_with_grad(
    outputs: &[Vec<f64>],
    labels: &[Label],
    kind: TaskKind,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_predictions(outputs, labels, kind)?;
    let n = outputs.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (o, l) in outputs.iter().zip(labels) {
        match *l {
            Label::Score(y) => {
                let d = o[0] - y;
                total += d * d;
                grads.push(vec![2.0 * d / n]);
            }
            Label::Class(c) => {
                total += math::log_sum_exp(o) - o[c];
                let mut g = math::softmax(o);
                g[c] -= 1.0;
                grads.push(g.into_iter().map(|v| v / n).collect());
            }
        }
    }
    Ok((total / n, grads))
}

/// `L = L_pt + α·L_cl`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub task: f64,
    pub contrastive: f64,
    pub total: f64,
    pub alpha: f64,
}

pub fn combined_loss(task: f64, contrastive: f64, alpha: f64) -> LossBundle {
    debug_assert!(alpha >= 0.0, "alpha must be non-negative");
    LossBundle {
        task,
        contrastive,
        total: task + alpha * contrastive,
        alpha,
    }
}
