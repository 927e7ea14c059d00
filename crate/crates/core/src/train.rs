//! Prompt-tuning loop: per-method objectives, gradients, and best-on-dev
//! checkpoint selection. Only the prompt parameters and the task head are
//! ever updated; the backbone is registered on the tape as constants.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::{BiasNliInstance, BiasStsbUnit};
use crate::encoder::{encode, Dropout, EncoderHandle, Pooling};
use crate::error::{Error, Result};
use crate::head::{TaskHead, TaskKind};
use crate::lexicon::{CounterfactualExample, Label, LabeledText, TextUnit};
use crate::math;
use crate::metrics::{correlation, NliPrediction, ScoredStsbUnit};
use crate::objectives::{
    combined_loss, contrastive_loss_with_grad, pairwise_entailment_contrastive_loss_with_grad,
    task_loss_from_logits_with_grad, ContrastiveBatch, ContrastiveGrad, LossBundle, DEFAULT_ALPHA,
    DEFAULT_TEMPERATURE,
};
use crate::optim::Adam;
use crate::prompt::{prompt_vector, PrefixVars, PromptBank, PromptParams, ReparamPrompt};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{Encoding, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Task loss only.
    Pt,
    /// Task loss plus counterfactual contrastive loss.
    Co2pt,
    /// Task loss over originals and their counterfactuals.
    PtCda,
    /// Task loss plus dropout-view contrastive loss over all inputs.
    PtScl,
    /// Counterfactual contrastive loss on attribute-bearing inputs plus
    /// dropout-view contrastive loss on the rest.
    Co2ptSclN,
    /// Contrastive loss over an external set of counterfactual pairs.
    PtNliCl,
    /// Task loss on augmented data plus the pairwise inter-association loss.
    PtCdaClP,
    /// Pairwise inter-association loss over external pairs.
    PtNliClP,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Pt,
        Method::Co2pt,
        Method::PtCda,
        Method::PtScl,
        Method::Co2ptSclN,
        Method::PtNliCl,
        Method::PtCdaClP,
        Method::PtNliClP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pt => "pt",
            Method::Co2pt => "co2pt",
            Method::PtCda => "pt_cda",
            Method::PtScl => "pt_scl",
            Method::Co2ptSclN => "co2pt_scl_n",
            Method::PtNliCl => "pt_nli_cl",
            Method::PtCdaClP => "pt_cda_cl_p",
            Method::PtNliClP => "pt_nli_cl_p",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Whether the method has a contrastive term weighted by alpha.
    pub fn has_contrastive_term(self) -> bool {
        !matches!(self, Method::Pt | Method::PtCda)
    }

    pub fn needs_auxiliary_pairs(self) -> bool {
        matches!(self, Method::PtNliCl | Method::PtNliClP)
    }

    pub fn needs_sentence_pairs(self) -> bool {
        matches!(self, Method::PtCdaClP | Method::PtNliClP)
    }

    fn augmented_in_task_loss(self) -> bool {
        matches!(self, Method::PtCda | Method::PtCdaClP)
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub task: TaskKind,
    pub prompt_length: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Average the contrastive loss over both anchor directions.
    pub symmetric: bool,
    /// Also feed counterfactual copies to the task loss.
    pub cda_in_task_loss: bool,
    /// Hidden width of the prompt reparameterization network; `None` trains
    /// the prefixes directly.
    pub reparam_hidden: Option<usize>,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Co2pt,
            task: TaskKind::Regression,
            prompt_length: 20,
            temperature: DEFAULT_TEMPERATURE,
            alpha: DEFAULT_ALPHA,
            pooling: Pooling::Cls,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 30,
            max_len: 128,
            seed: 0,
            symmetric: false,
            cda_in_task_loss: false,
            reparam_hidden: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be a finite non-negative number");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        if self.max_len < 3 {
            return bad("max length must leave room for special tokens");
        }
        if self.reparam_hidden == Some(0) {
            return bad("reparameterization width must be positive");
        }
        Ok(())
    }
}

/// Trainable state: prompt parameters and task head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub prompt: PromptParams,
    pub head: TaskHead,
    pub pooling: Pooling,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const TASK_DROPOUT_STREAM: u64 = 2;
const CONTRASTIVE_DROPOUT_STREAM: u64 = 3;

impl Model {
    /// Fresh prompt and head drawn from the config seed. A regression head's
    /// bias starts at `label_mean`.
    pub fn init(handle: &EncoderHandle, cfg: &TrainConfig, label_mean: Option<f64>) -> Self {
        let mut rng = rng_stream(cfg.seed, INIT_STREAM);
        let (layers, hidden) = (handle.num_layers(), handle.hidden_size());
        let prompt = match cfg.reparam_hidden {
            None => PromptParams::Direct(PromptBank::init(layers, cfg.prompt_length, hidden, &mut rng)),
            Some(mid) => PromptParams::Reparam(ReparamPrompt::init(
                layers,
                cfg.prompt_length,
                hidden,
                mid,
                &mut rng,
            )),
        };
        let mut head = TaskHead::init(hidden, cfg.task, &mut rng);
        if let (TaskKind::Regression, Some(m)) = (cfg.task, label_mean) {
            head.bias.data_mut()[0] = m;
        }
        Self {
            prompt,
            head,
            pooling: cfg.pooling,
        }
    }

    pub fn bank(&self) -> PromptBank {
        self.prompt.materialize()
    }

    fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        self.prompt
            .tensors()
            .into_iter()
            .chain(self.head.tensors())
            .map(Tensor::shape)
            .collect()
    }
}

/// Evaluation-mode scoring with a materialized prompt bank.
pub struct Scorer<'a> {
    handle: &'a EncoderHandle,
    bank: PromptBank,
    head: TaskHead,
    pooling: Pooling,
    tokenizer: Tokenizer,
}

impl<'a> Scorer<'a> {
    pub fn new(
        handle: &'a EncoderHandle,
        bank: PromptBank,
        head: TaskHead,
        pooling: Pooling,
        max_len: usize,
    ) -> Result<Self> {
        handle.check_compatible(&bank)?;
        if head.weight.rows() != handle.hidden_size() {
            return Err(Error::DimensionMismatch {
                what: "task head input".into(),
                expected: handle.hidden_size(),
                found: head.weight.rows(),
            });
        }
        Ok(Self {
            handle,
            bank,
            head,
            pooling,
            tokenizer: handle.config().tokenizer(max_len),
        })
    }

    pub fn from_model(handle: &'a EncoderHandle, model: &Model, max_len: usize) -> Result<Self> {
        Self::new(handle, model.bank(), model.head.clone(), model.pooling, max_len)
    }

    pub fn kind(&self) -> TaskKind {
        self.head.kind
    }

    pub fn representation(&self, text: &TextUnit) -> Result<Vec<f64>> {
        let enc = self.tokenizer.encode_unit(text);
        let mut reps = encode(self.handle, &self.bank, &[enc], self.pooling)?;
        Ok(reps.remove(0).values)
    }

    /// Raw head outputs: a score for regression, logits for classification.
    pub fn outputs(&self, text: &TextUnit) -> Result<Vec<f64>> {
        Ok(self.head.predict(&self.representation(text)?))
    }

    pub fn score(&self, text: &TextUnit) -> Result<f64> {
        Ok(self.outputs(text)?[0])
    }

    pub fn probabilities(&self, text: &TextUnit) -> Result<Vec<f64>> {
        Ok(math::softmax(&self.outputs(text)?))
    }

    /// Predicted class index (ties to the lowest index).
    pub fn predict_class(&self, text: &TextUnit) -> Result<usize> {
        let out = self.outputs(text)?;
        let mut best = 0;
        for (i, &v) in out.iter().enumerate() {
            if v > out[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Dev metric: Spearman correlation for regression, accuracy for
/// classification. Higher is better. Constant predictions count as zero
/// correlation.
pub fn dev_metric(scorer: &Scorer<'_>, dev: &[LabeledText]) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match scorer.kind() {
        TaskKind::Regression => {
            let mut preds = Vec::with_capacity(dev.len());
            let mut golds = Vec::with_capacity(dev.len());
            for ex in dev {
                let Label::Score(y) = ex.label else {
                    return Err(Error::LabelKind);
                };
                preds.push(scorer.score(&ex.text)?);
                golds.push(y);
            }
            match correlation(&preds, &golds) {
                Ok(c) => Ok(c.spearman),
                Err(Error::UndefinedCorrelation(_)) => Ok(0.0),
                Err(e) => Err(e),
            }
        }
        TaskKind::Classification { .. } => {
            let mut correct = 0usize;
            for ex in dev {
                let Label::Class(c) = ex.label else {
                    return Err(Error::LabelKind);
                };
                correct += (scorer.predict_class(&ex.text)? == c) as usize;
            }
            Ok(correct as f64 / dev.len() as f64)
        }
    }
}

/// Scores both gendered pairs of every unit.
pub fn score_bias_stsb(scorer: &Scorer<'_>, units: &[BiasStsbUnit]) -> Result<Vec<ScoredStsbUnit>> {
    units
        .iter()
        .map(|u| {
            let m = TextUnit::pair(u.pair_male.0.clone(), u.pair_male.1.clone());
            let f = TextUnit::pair(u.pair_female.0.clone(), u.pair_female.1.clone());
            Ok(ScoredStsbUnit {
                unit_id: u.unit_id,
                score_male: scorer.score(&m)?,
                score_female: scorer.score(&f)?,
            })
        })
        .collect()
}

/// Class probabilities in (entailment, neutral, contradiction) order.
pub fn predict_nli(scorer: &Scorer<'_>, instances: &[BiasNliInstance]) -> Result<Vec<NliPrediction>> {
    instances
        .iter()
        .map(|inst| {
            let probs = scorer.probabilities(&TextUnit::pair(inst.premise.clone(), inst.hypothesis.clone()))?;
            if probs.len() != 3 {
                return Err(Error::DimensionMismatch {
                    what: "nli classes".into(),
                    expected: 3,
                    found: probs.len(),
                });
            }
            Ok(NliPrediction::from_probs([probs[0], probs[1], probs[2]]))
        })
        .collect()
}

struct SplitPair {
    first: Encoding,
    second: Encoding,
    second_augmented: Option<Encoding>,
}

struct Prepared {
    original: Encoding,
    augmented: Option<Encoding>,
    label: Label,
    split: Option<SplitPair>,
}

fn prepare(examples: &[CounterfactualExample], tok: &Tokenizer) -> Vec<Prepared> {
    examples
        .iter()
        .map(|ex| Prepared {
            original: tok.encode_unit(&ex.original),
            augmented: ex.augmented.as_ref().map(|a| tok.encode_unit(a)),
            label: ex.label,
            split: ex.original.second().map(|second| SplitPair {
                first: tok.encode(ex.original.first()),
                second: tok.encode(second),
                second_augmented: ex
                    .augmented
                    .as_ref()
                    .and_then(TextUnit::second)
                    .map(|s| tok.encode(s)),
            }),
        })
        .collect()
}

/// Loss value and gradients for the prompt tensors followed by the head
/// tensors (in [`PromptParams::tensors`] / [`TaskHead::tensors`] order).
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss: LossBundle,
    pub gradients: Vec<Tensor>,
}

struct Forward<'t> {
    handle: &'t EncoderHandle,
    vars: crate::encoder::BackboneVars,
    prefixes: Vec<PrefixVars>,
    pooling: Pooling,
}

impl Forward<'_> {
    fn pool(&self, tape: &mut Tape, enc: &Encoding, dropout: &mut Dropout<'_>) -> Var {
        self.handle
            .pooled(tape, &self.vars, enc, Some(&self.prefixes), self.pooling, dropout)
    }
}

fn values(tape: &Tape, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter().map(|&v| tape.value(v).data().to_vec()).collect()
}

/// Collects scaled seeds from a contrastive gradient.
fn push_contrastive_seeds(
    seeds: &mut Vec<(Var, Tensor)>,
    grad: &ContrastiveGrad,
    prompt: Option<Var>,
    groups: &[&[Var]],
    alpha: f64,
) {
    if let Some(p) = prompt {
        let d: Vec<f64> = grad.d_prompt.iter().map(|v| alpha * v).collect();
        seeds.push((p, Tensor::row_vector(d)));
    }
    for (vars, d) in groups.iter().zip(&grad.d_groups) {
        for (&v, g) in vars.iter().zip(d) {
            seeds.push((v, Tensor::row_vector(g.iter().map(|x| alpha * x).collect())));
        }
    }
}

fn step(
    handle: &EncoderHandle,
    model: &Model,
    cfg: &TrainConfig,
    batch: &[&Prepared],
    aux: &[&Prepared],
    rngs: Option<(&mut ChaCha8Rng, &mut ChaCha8Rng)>,
) -> Result<StepOutput> {
    let rate = handle.config().dropout;
    let (mut task_do, mut cl_do) = match rngs {
        Some((t, c)) => (Dropout::train(rate, t), Dropout::train(rate, c)),
        None => (Dropout::off(), Dropout::off()),
    };

    let mut tape = Tape::new();
    let vars = handle.register(&mut tape);
    let (prompt_leaves, prefixes) = model.prompt.register(&mut tape);
    let head_vars = model.head.register(&mut tape, true);
    let p_var = prompt_vector(&mut tape, &prefixes);
    let p_vals = p_var.map(|v| tape.value(v).data().to_vec()).unwrap_or_default();
    let fwd = Forward {
        handle,
        vars,
        prefixes,
        pooling: model.pooling,
    };

    // task loss on originals, optionally extended by counterfactual copies
    let originals: Vec<Var> = batch
        .iter()
        .map(|ex| fwd.pool(&mut tape, &ex.original, &mut task_do))
        .collect();
    let mut task_reps: Vec<Var> = originals.clone();
    let mut task_labels: Vec<Label> = batch.iter().map(|ex| ex.label).collect();
    let mut augmented: Vec<Option<Var>> = alloc::vec![None; batch.len()];
    if cfg.method.augmented_in_task_loss() || cfg.cda_in_task_loss {
        for (i, ex) in batch.iter().enumerate() {
            if let Some(enc) = &ex.augmented {
                let v = fwd.pool(&mut tape, enc, &mut task_do);
                augmented[i] = Some(v);
                task_reps.push(v);
                task_labels.push(ex.label);
            }
        }
    }
    let outputs: Vec<Var> = task_reps
        .iter()
        .map(|&r| TaskHead::apply(&mut tape, head_vars, r))
        .collect();
    let (task_loss, d_out) =
        task_loss_from_logits_with_grad(&values(&tape, &outputs), &task_labels, cfg.task)?;
    let mut seeds: Vec<(Var, Tensor)> = outputs
        .iter()
        .zip(d_out)
        .map(|(&v, d)| (v, Tensor::row_vector(d)))
        .collect();

    let alpha = cfg.alpha;
    let mut cl_total = 0.0;
    let mut cl_seeds: Vec<(Var, Tensor)> = Vec::new();
    let tau = cfg.temperature;
    let info_nce = |tape: &Tape, anchors: &[Var], positives: &[Var], seeds: &mut Vec<(Var, Tensor)>| -> Result<f64> {
        if anchors.is_empty() {
            return Ok(0.0);
        }
        let batch = ContrastiveBatch::new(p_vals.clone(), values(tape, anchors), values(tape, positives), tau)?;
        let g = contrastive_loss_with_grad(&batch, cfg.symmetric)?;
        push_contrastive_seeds(seeds, &g, p_var, &[anchors, positives], alpha);
        Ok(g.loss)
    };

    match cfg.method {
        Method::Pt | Method::PtCda => {}
        Method::Co2pt | Method::Co2ptSclN => {
            let (mut anchors, mut positives) = (Vec::new(), Vec::new());
            let (mut plain, mut plain_view) = (Vec::new(), Vec::new());
            for (i, ex) in batch.iter().enumerate() {
                match (&ex.augmented, augmented[i]) {
                    (Some(_), Some(v)) => {
                        anchors.push(originals[i]);
                        positives.push(v);
                    }
                    (Some(enc), None) => {
                        anchors.push(originals[i]);
                        positives.push(fwd.pool(&mut tape, enc, &mut cl_do));
                    }
                    (None, _) if cfg.method == Method::Co2ptSclN => {
                        plain.push(originals[i]);
                        plain_view.push(fwd.pool(&mut tape, &ex.original, &mut cl_do));
                    }
                    (None, _) => {}
                }
            }
            cl_total += info_nce(&tape, &anchors, &positives, &mut cl_seeds)?;
            cl_total += info_nce(&tape, &plain, &plain_view, &mut cl_seeds)?;
        }
        Method::PtScl => {
            let second: Vec<Var> = batch
                .iter()
                .map(|ex| fwd.pool(&mut tape, &ex.original, &mut cl_do))
                .collect();
            cl_total += info_nce(&tape, &originals, &second, &mut cl_seeds)?;
        }
        Method::PtNliCl => {
            if aux.is_empty() {
                return Err(Error::MissingAuxiliaryPairs);
            }
            let (mut anchors, mut positives) = (Vec::new(), Vec::new());
            for ex in aux {
                if let Some(enc) = &ex.augmented {
                    anchors.push(fwd.pool(&mut tape, &ex.original, &mut cl_do));
                    positives.push(fwd.pool(&mut tape, enc, &mut cl_do));
                }
            }
            cl_total += info_nce(&tape, &anchors, &positives, &mut cl_seeds)?;
        }
        Method::PtCdaClP | Method::PtNliClP => {
            let source: &[&Prepared] = if cfg.method == Method::PtNliClP {
                if aux.is_empty() {
                    return Err(Error::MissingAuxiliaryPairs);
                }
                aux
            } else {
                batch
            };
            let (mut s1, mut s2, mut s2a) = (Vec::new(), Vec::new(), Vec::new());
            for ex in source {
                let Some(split) = &ex.split else {
                    return Err(Error::InvalidConfig(
                        "pairwise contrastive loss needs sentence-pair inputs".into(),
                    ));
                };
                if ex.augmented.is_none() {
                    continue;
                }
                let aug = split.second_augmented.as_ref().unwrap_or(&split.second);
                s1.push(fwd.pool(&mut tape, &split.first, &mut cl_do));
                s2.push(fwd.pool(&mut tape, &split.second, &mut cl_do));
                s2a.push(fwd.pool(&mut tape, aug, &mut cl_do));
            }
            if !s1.is_empty() {
                let g = pairwise_entailment_contrastive_loss_with_grad(
                    &p_vals,
                    &values(&tape, &s1),
                    &values(&tape, &s2),
                    &values(&tape, &s2a),
                    tau,
                )?;
                push_contrastive_seeds(&mut cl_seeds, &g, p_var, &[&s1, &s2, &s2a], alpha);
                cl_total += g.loss;
            }
        }
    }

    // a zero weight contributes nothing; leave the gradient path untouched
    if alpha > 0.0 {
        seeds.extend(cl_seeds);
    }
    let loss = combined_loss(task_loss, cl_total, alpha);
    let grads = tape.backward(&seeds);
    let gradients = prompt_leaves
        .iter()
        .chain([&head_vars.0, &head_vars.1])
        .map(|&v| {
            let (r, c) = tape.value(v).shape();
            grads.get_or_zeros(v, r, c)
        })
        .collect();
    Ok(StepOutput { loss, gradients })
}

/// Loss and gradients for one batch in evaluation mode (no dropout).
pub fn loss_and_gradients(
    handle: &EncoderHandle,
    model: &Model,
    cfg: &TrainConfig,
    batch: &[CounterfactualExample],
    auxiliary: &[CounterfactualExample],
) -> Result<StepOutput> {
    cfg.validate()?;
    handle.check_compatible(&model.bank())?;
    let tok = handle.config().tokenizer(cfg.max_len);
    let b = prepare(batch, &tok);
    let a = prepare(auxiliary, &tok);
    let br: Vec<&Prepared> = b.iter().collect();
    let ar: Vec<&Prepared> = a.iter().collect();
    step(handle, model, cfg, &br, &ar, None)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [CounterfactualExample],
    pub dev: &'a [LabeledText],
    /// External counterfactual pairs for the methods that use them.
    pub auxiliary: &'a [CounterfactualExample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub contrastive_loss: f64,
    pub total_loss: f64,
    pub dev_metric: f64,
    /// Bias probe value, when a probe was supplied.
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// State at the epoch with the highest dev metric.
    pub model: Model,
    pub best_epoch: usize,
    pub best_dev_metric: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

/// Trains from a fresh initialization. `probe` runs after every epoch on the
/// current model and may return a bias score for the epoch series.
pub fn train<F>(handle: &EncoderHandle, cfg: &TrainConfig, data: TrainData<'_>, mut probe: F) -> Result<TrainOutcome>
where
    F: FnMut(&Model) -> Result<Option<f64>>,
{
    cfg.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.method.needs_auxiliary_pairs() && data.auxiliary.is_empty() {
        return Err(Error::MissingAuxiliaryPairs);
    }
    let label_mean = match cfg.task {
        TaskKind::Regression => {
            let mut sum = 0.0;
            for ex in data.train {
                let Label::Score(y) = ex.label else {
                    return Err(Error::LabelKind);
                };
                sum += y;
            }
            Some(sum / data.train.len() as f64)
        }
        TaskKind::Classification { .. } => None,
    };
    let mut model = Model::init(handle, cfg, label_mean);
    handle.check_compatible(&model.bank())?;

    let tok = handle.config().tokenizer(cfg.max_len);
    let train_set = prepare(data.train, &tok);
    let aux_set = prepare(data.auxiliary, &tok);
    let mut shuffle_rng = rng_stream(cfg.seed, SHUFFLE_STREAM);
    let mut task_rng = rng_stream(cfg.seed, TASK_DROPOUT_STREAM);
    let mut cl_rng = rng_stream(cfg.seed, CONTRASTIVE_DROPOUT_STREAM);
    let mut adam = Adam::new(cfg.learning_rate, &model.parameter_shapes());

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut aux_order: Vec<usize> = (0..aux_set.len()).collect();
    let mut aux_cursor = aux_order.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    let mut steps = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut task_sum, mut cl_sum, mut total_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut aux: Vec<&Prepared> = Vec::new();
            if cfg.method.needs_auxiliary_pairs() {
                for _ in 0..cfg.batch_size.min(aux_set.len()) {
                    if aux_cursor == aux_order.len() {
                        aux_order.shuffle(&mut shuffle_rng);
                        aux_cursor = 0;
                    }
                    aux.push(&aux_set[aux_order[aux_cursor]]);
                    aux_cursor += 1;
                }
            }
            let out = step(handle, &model, cfg, &batch, &aux, Some((&mut task_rng, &mut cl_rng)))?;
            if !out.loss.total.is_finite() || out.gradients.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step: batch_idx,
                });
            }
            let mut params: Vec<&mut Tensor> = model.prompt.tensors_mut();
            params.extend(model.head.tensors_mut());
            adam.step(&mut params, &out.gradients);
            steps += 1;
            task_sum += out.loss.task;
            cl_sum += out.loss.contrastive;
            total_sum += out.loss.total;
            batches += 1;
        }
        if batches == 0 {
            break 'epochs;
        }
        let scorer = Scorer::from_model(handle, &model, cfg.max_len)?;
        let dev = dev_metric(&scorer, data.dev)?;
        let bias = probe(&model)?;
        let n = batches as f64;
        history.push(EpochRecord {
            epoch,
            task_loss: task_sum / n,
            contrastive_loss: cl_sum / n,
            total_loss: total_sum / n,
            dev_metric: dev,
            bias,
        });
        if best.as_ref().map_or(true, |(_, d, _)| dev > *d) {
            best = Some((epoch, dev, model.clone()));
        }
    }

    let (best_epoch, best_dev_metric, model) = best.ok_or(Error::EmptyDataset)?;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_dev_metric,
        history,
        steps,
    })
}

/// Identifier-friendly label for a config, e.g. `co2pt-l20-t0.05-a1`.
pub fn run_label(cfg: &TrainConfig) -> String {
    alloc::format!(
        "{}-l{}-t{}-a{}",
        cfg.method,
        cfg.prompt_length,
        cfg.temperature,
        cfg.alpha
    )
}
