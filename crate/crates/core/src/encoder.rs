//! Frozen transformer encoder with per-layer prefix key/value injection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::prompt::{PrefixVars, PromptBank};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{Encoding, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: u32,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub layer_norm_eps: f64,
    /// Dropout applied during training forward passes.
    pub dropout: f64,
}

impl EncoderConfig {
    /// Small from-scratch encoder used for desk-scale runs and tests.
    pub fn toy(layers: usize, hidden: usize, heads: usize) -> Self {
        Self {
            vocab_size: 4096,
            hidden,
            layers,
            heads,
            ffn: hidden * 2,
            max_positions: 64,
            layer_norm_eps: 1e-5,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            ));
        }
        if self.ffn == 0 || self.max_positions < 3 || self.vocab_size <= 4 {
            return fail("ffn, max_positions and vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn tokenizer(&self, max_len: usize) -> Tokenizer {
        Tokenizer::new(self.vocab_size, max_len.min(self.max_positions))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
}

const LAYER_TENSORS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2",
    "ln2_g", "ln2_b",
];

impl LayerWeights {
    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_g, &self.ln1_b, &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g,
            &self.ln2_b,
        ]
    }
}

/// Backbone weights. Never updated by prompt tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub config: EncoderConfig,
    pub word_emb: Tensor,
    pub pos_emb: Tensor,
    pub type_emb: Tensor,
    pub emb_ln_g: Tensor,
    pub emb_ln_b: Tensor,
    pub layers: Vec<LayerWeights>,
}

impl Backbone {
    /// Randomly initialised backbone. Projections use `1/sqrt(fan_in)` scale so
    /// the untrained stack still mixes token information.
    pub fn random(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let proj = 1.0 / math::sqrt(h as f64);
        let ffn_out = 1.0 / math::sqrt(config.ffn as f64);
        let word_emb = Tensor::randn(config.vocab_size as usize, h, 1.0, &mut rng);
        let pos_emb = Tensor::randn(config.max_positions, h, 0.5, &mut rng);
        let type_emb = Tensor::randn(2, h, 0.5, &mut rng);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let bias = |n: usize, rng: &mut ChaCha8Rng| Tensor::randn(1, n, 0.02, rng);
            layers.push(LayerWeights {
                wq: Tensor::randn(h, h, proj, &mut rng),
                bq: bias(h, &mut rng),
                wk: Tensor::randn(h, h, proj, &mut rng),
                bk: bias(h, &mut rng),
                wv: Tensor::randn(h, h, proj, &mut rng),
                bv: bias(h, &mut rng),
                wo: Tensor::randn(h, h, proj, &mut rng),
                bo: bias(h, &mut rng),
                ln1_g: Tensor::filled(1, h, 1.0),
                ln1_b: Tensor::zeros(1, h),
                w1: Tensor::randn(h, config.ffn, proj, &mut rng),
                b1: bias(config.ffn, &mut rng),
                w2: Tensor::randn(config.ffn, h, ffn_out, &mut rng),
                b2: bias(h, &mut rng),
                ln2_g: Tensor::filled(1, h, 1.0),
                ln2_b: Tensor::zeros(1, h),
            });
        }
        Ok(Self {
            config,
            word_emb,
            pos_emb,
            type_emb,
            emb_ln_g: Tensor::filled(1, h, 1.0),
            emb_ln_b: Tensor::zeros(1, h),
            layers,
        })
    }

    /// Every weight under a stable name, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.push(("embeddings.word".into(), &self.word_emb));
        out.push(("embeddings.position".into(), &self.pos_emb));
        out.push(("embeddings.token_type".into(), &self.type_emb));
        out.push(("embeddings.ln_g".into(), &self.emb_ln_g));
        out.push(("embeddings.ln_b".into(), &self.emb_ln_b));
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSORS.iter().zip(layer.tensors()) {
                out.push((format!("layer.{i}.{name}"), t));
            }
        }
        out
    }

    /// Rebuilds a backbone from named tensors, checking every shape against
    /// `config`.
    pub fn from_named(config: EncoderConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut take = |name: String, rows: usize, cols: usize| -> Result<Tensor> {
            let t = tensors.remove(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.rows() != rows {
                return Err(Error::DimensionMismatch {
                    what: format!("{name} rows"),
                    expected: rows,
                    found: t.rows(),
                });
            }
            if t.cols() != cols {
                return Err(Error::DimensionMismatch {
                    what: format!("{name} cols"),
                    expected: cols,
                    found: t.cols(),
                });
            }
            Ok(t)
        };
        let word_emb = take("embeddings.word".into(), config.vocab_size as usize, h)?;
        let pos_emb = take("embeddings.position".into(), config.max_positions, h)?;
        let type_emb = take("embeddings.token_type".into(), 2, h)?;
        let emb_ln_g = take("embeddings.ln_g".into(), 1, h)?;
        let emb_ln_b = take("embeddings.ln_b".into(), 1, h)?;
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let mut t = |n: &str, r: usize, c: usize| take(format!("layer.{i}.{n}"), r, c);
            layers.push(LayerWeights {
                wq: t("wq", h, h)?,
                bq: t("bq", 1, h)?,
                wk: t("wk", h, h)?,
                bk: t("bk", 1, h)?,
                wv: t("wv", h, h)?,
                bv: t("bv", 1, h)?,
                wo: t("wo", h, h)?,
                bo: t("bo", 1, h)?,
                ln1_g: t("ln1_g", 1, h)?,
                ln1_b: t("ln1_b", 1, h)?,
                w1: t("w1", h, config.ffn)?,
                b1: t("b1", 1, config.ffn)?,
                w2: t("w2", config.ffn, h)?,
                b2: t("b2", 1, h)?,
                ln2_g: t("ln2_g", 1, h)?,
                ln2_b: t("ln2_b", 1, h)?,
            });
        }
        Ok(Self {
            config,
            word_emb,
            pos_emb,
            type_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Where a backbone comes from.
#[derive(Debug, Clone)]
pub enum BackboneSource {
    /// Built-in random toy encoder.
    Toy { config: EncoderConfig, seed: u64 },
    /// Weights already read from a checkpoint (by the IO layer).
    Loaded {
        id: String,
        config: EncoderConfig,
        tensors: BTreeMap<String, Tensor>,
    },
}

/// A loaded, frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderHandle {
    id: String,
    backbone: Backbone,
    frozen: bool,
}

/// Loads or constructs an encoder; every backbone weight is non-trainable.
pub fn build_encoder(source: BackboneSource) -> Result<EncoderHandle> {
    let (id, backbone) = match source {
        BackboneSource::Toy { config, seed } => {
            let id = format!(
                "toy:layers={},hidden={},heads={},seed={seed}",
                config.layers, config.hidden, config.heads
            );
            (id, Backbone::random(config, seed)?)
        }
        BackboneSource::Loaded {
            id,
            config,
            tensors,
        } => (id, Backbone::from_named(config, tensors)?),
    };
    Ok(EncoderHandle {
        id,
        backbone,
        frozen: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// First position (`[CLS]`) of the final layer.
    #[default]
    Cls,
    /// Mean over the real token positions of the final layer.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRepresentation {
    pub values: Vec<f64>,
    pub pooling: Pooling,
}

/// Backbone weights registered on a tape as constants.
#[derive(Debug)]
pub struct BackboneVars {
    emb_ln_g: Var,
    emb_ln_b: Var,
    layers: Vec<[Var; 16]>,
}

/// Dropout state for one forward pass; `None` rng means evaluation mode.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if rate <= 0.0 {
            return x;
        }
        let (rows, cols) = tape.value(x).shape();
        let keep = 1.0 / (1.0 - rate);
        let data = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        tape.mul_const(x, Tensor::from_vec(rows, cols, data))
    }
}

impl EncoderHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.backbone.config
    }

    pub fn num_layers(&self) -> usize {
        self.backbone.config.layers
    }

    pub fn hidden_size(&self) -> usize {
        self.backbone.config.hidden
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    /// Fails unless `bank` was shaped for this backbone.
    pub fn check_compatible(&self, bank: &PromptBank) -> Result<()> {
        if bank.hidden() != self.hidden_size() {
            return Err(Error::DimensionMismatch {
                what: "prompt bank hidden size".into(),
                expected: self.hidden_size(),
                found: bank.hidden(),
            });
        }
        if bank.num_layers() != self.num_layers() {
            return Err(Error::DimensionMismatch {
                what: "prompt bank layers".into(),
                expected: self.num_layers(),
                found: bank.num_layers(),
            });
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> BackboneVars {
        let b = &self.backbone;
        let emb_ln_g = tape.constant(b.emb_ln_g.clone());
        let emb_ln_b = tape.constant(b.emb_ln_b.clone());
        let layers = b
            .layers
            .iter()
            .map(|l| l.tensors().map(|t| tape.constant(t.clone())))
            .collect();
        BackboneVars {
            emb_ln_g,
            emb_ln_b,
            layers,
        }
    }

    fn embed(&self, enc: &Encoding) -> Tensor {
        let b = &self.backbone;
        let h = b.config.hidden;
        let mut x = Tensor::zeros(enc.len(), h);
        for (pos, (&id, &seg)) in enc.ids.iter().zip(&enc.segments).enumerate() {
            let row = x.row_mut(pos);
            let w = b.word_emb.row(id as usize);
            let p = b.pos_emb.row(pos);
            let t = b.type_emb.row(seg as usize);
            for c in 0..h {
                row[c] = w[c] + p[c] + t[c];
            }
        }
        x
    }

    /// Final-layer hidden states for one sequence. With `prefix`, every layer
    /// attends over `[prefix keys/values ‖ token keys/values]`; prompt positions
    /// never produce queries or outputs.
    pub fn hidden_states(
        &self,
        tape: &mut Tape,
        vars: &BackboneVars,
        enc: &Encoding,
        prefix: Option<&[PrefixVars]>,
        dropout: &mut Dropout<'_>,
    ) -> Var {
        let cfg = &self.backbone.config;
        assert!(
            enc.len() <= cfg.max_positions,
            "sequence longer than max_positions; tokenize with the encoder's tokenizer"
        );
        if let Some(p) = prefix {
            assert_eq!(p.len(), cfg.layers, "one prefix per layer");
        }
        let eps = cfg.layer_norm_eps;
        let dh = cfg.head_dim();
        let scale = 1.0 / math::sqrt(dh as f64);

        let emb = tape.constant(self.embed(enc));
        let mut x = tape.layer_norm(emb, vars.emb_ln_g, vars.emb_ln_b, eps);
        x = dropout.apply(tape, x);

        for (l, w) in vars.layers.iter().enumerate() {
            let [wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b] = *w;
            let q = tape.matmul(x, wq);
            let q = tape.add_row(q, bq);
            let k = tape.matmul(x, wk);
            let mut k = tape.add_row(k, bk);
            let v = tape.matmul(x, wv);
            let mut v = tape.add_row(v, bv);
            if let Some(p) = prefix {
                k = tape.concat_rows(p[l].key, k);
                v = tape.concat_rows(p[l].value, v);
            }
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = tape.slice_cols(q, hd * dh, dh);
                let kh = tape.slice_cols(k, hd * dh, dh);
                let vh = tape.slice_cols(v, hd * dh, dh);
                let scores = tape.matmul_nt(qh, kh);
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scores);
                let attn = dropout.apply(tape, attn);
                heads.push(tape.matmul(attn, vh));
            }
            let ctx = tape.concat_cols(&heads);
            let out = tape.matmul(ctx, wo);
            let out = tape.add_row(out, bo);
            let out = dropout.apply(tape, out);
            let res = tape.add(x, out);
            x = tape.layer_norm(res, ln1_g, ln1_b, eps);

            let f = tape.matmul(x, w1);
            let f = tape.add_row(f, b1);
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2);
            let f = tape.add_row(f, b2);
            let f = dropout.apply(tape, f);
            let res = tape.add(x, f);
            x = tape.layer_norm(res, ln2_g, ln2_b, eps);
        }
        x
    }

    /// Pooled `1 × hidden` representation of one sequence.
    pub fn pooled(
        &self,
        tape: &mut Tape,
        vars: &BackboneVars,
        enc: &Encoding,
        prefix: Option<&[PrefixVars]>,
        pooling: Pooling,
        dropout: &mut Dropout<'_>,
    ) -> Var {
        let states = self.hidden_states(tape, vars, enc, prefix, dropout);
        let n = enc.len();
        let weights = match pooling {
            Pooling::Cls => {
                let mut w = alloc::vec![0.0; n];
                w[0] = 1.0;
                w
            }
            Pooling::Mean => alloc::vec![1.0 / n as f64; n],
        };
        tape.row_weighted_sum(states, weights)
    }
}

/// Evaluation-mode representations for a batch of encoded sequences.
pub fn encode(
    handle: &EncoderHandle,
    bank: &PromptBank,
    batch: &[Encoding],
    pooling: Pooling,
) -> Result<Vec<SentenceRepresentation>> {
    handle.check_compatible(bank)?;
    let mut out = Vec::with_capacity(batch.len());
    for enc in batch {
        let mut tape = Tape::new();
        let vars = handle.register(&mut tape);
        let prefix = bank.register(&mut tape, false);
        let pooled = handle.pooled(&mut tape, &vars, enc, Some(&prefix), pooling, &mut Dropout::off());
        out.push(SentenceRepresentation {
            values: tape.value(pooled).data().to_vec(),
            pooling,
        });
    }
    Ok(out)
}

/// The same forward pass without any prefix.
pub fn encode_vanilla(
    handle: &EncoderHandle,
    batch: &[Encoding],
    pooling: Pooling,
) -> Vec<SentenceRepresentation> {
    batch
        .iter()
        .map(|enc| {
            let mut tape = Tape::new();
            let vars = handle.register(&mut tape);
            let pooled = handle.pooled(&mut tape, &vars, enc, None, pooling, &mut Dropout::off());
            SentenceRepresentation {
                values: tape.value(pooled).data().to_vec(),
                pooling,
            }
        })
        .collect()
}
