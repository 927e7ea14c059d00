//! Trainable per-layer prefix prompts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Init scale for prompt parameters.
pub const PROMPT_INIT_STD: f64 = 0.02;

/// Prefix keys and values of one layer, as registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PrefixVars {
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixLayer {
    /// `prompt_length × hidden`
    pub key: Tensor,
    /// `prompt_length × hidden`
    pub value: Tensor,
}

/// The prompt parameters: one key block and one value block per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBank {
    prompt_length: usize,
    hidden: usize,
    layers: Vec<PrefixLayer>,
}

impl PromptBank {
    pub fn init<R: Rng + ?Sized>(
        num_layers: usize,
        prompt_length: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|_| PrefixLayer {
                key: Tensor::randn(prompt_length, hidden, PROMPT_INIT_STD, rng),
                value: Tensor::randn(prompt_length, hidden, PROMPT_INIT_STD, rng),
            })
            .collect();
        Self {
            prompt_length,
            hidden,
            layers,
        }
    }

    pub fn prompt_length(&self) -> usize {
        self.prompt_length
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[PrefixLayer] {
        &self.layers
    }

    /// `num_layers × 2 × prompt_length × hidden`
    pub fn parameter_count(&self) -> usize {
        self.layers.len() * 2 * self.prompt_length * self.hidden
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.key, &l.value]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.key, &mut l.value])
            .collect()
    }

    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> Vec<PrefixVars> {
        self.layers
            .iter()
            .map(|l| PrefixVars {
                key: tape.leaf(l.key.clone(), requires_grad),
                value: tape.leaf(l.value.clone(), requires_grad),
            })
            .collect()
    }

    /// Mean of the final layer's prefix value vectors (empty when the prompt
    /// length is zero).
    pub fn prompt_representation(&self) -> Vec<f64> {
        let Some(last) = self.layers.last() else {
            return Vec::new();
        };
        if self.prompt_length == 0 {
            return Vec::new();
        }
        let n = self.prompt_length as f64;
        last.value.sum_rows().data().iter().map(|v| v / n).collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("prefix.{i}.key"), &l.key),
                    (format!("prefix.{i}.value"), &l.value),
                ]
            })
            .collect()
    }

    pub fn from_named(num_layers: usize, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut layers = Vec::with_capacity(num_layers);
        let mut shape = None;
        for i in 0..num_layers {
            let mut take = |n: String| tensors.remove(&n).ok_or(Error::MissingTensor(n));
            let key = take(format!("prefix.{i}.key"))?;
            let value = take(format!("prefix.{i}.value"))?;
            let s = *shape.get_or_insert(key.shape());
            for t in [&key, &value] {
                if t.shape() != s {
                    return Err(Error::DimensionMismatch {
                        what: format!("prefix.{i} shape"),
                        expected: s.1,
                        found: t.cols(),
                    });
                }
            }
            layers.push(PrefixLayer { key, value });
        }
        let (prompt_length, hidden) = shape.unwrap_or((0, 0));
        Ok(Self {
            prompt_length,
            hidden,
            layers,
        })
    }
}

/// Registers the prompt representation `p` on a tape: the mean of the final
/// layer's prefix values. `None` when there are no prompt positions.
pub fn prompt_vector(tape: &mut Tape, prefix: &[PrefixVars]) -> Option<Var> {
    let last = prefix.last()?;
    let n = tape.value(last.value).rows();
    if n == 0 {
        return None;
    }
    Some(tape.row_weighted_sum(last.value, alloc::vec![1.0 / n as f64; n]))
}

/// Two-layer reparameterization: prefixes are produced by
/// `tanh(E·W1 + b1)·W2 + b2` from a prompt embedding `E`. Used only during
/// training; [`ReparamPrompt::materialize`] bakes it into a plain bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReparamPrompt {
    num_layers: usize,
    hidden: usize,
    pub embedding: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ReparamPrompt {
    pub fn init<R: Rng + ?Sized>(
        num_layers: usize,
        prompt_length: usize,
        hidden: usize,
        mid: usize,
        rng: &mut R,
    ) -> Self {
        let out = num_layers * 2 * hidden;
        Self {
            num_layers,
            hidden,
            embedding: Tensor::randn(prompt_length, hidden, PROMPT_INIT_STD, rng),
            w1: Tensor::randn(hidden, mid, PROMPT_INIT_STD, rng),
            b1: Tensor::zeros(1, mid),
            w2: Tensor::randn(mid, out, PROMPT_INIT_STD, rng),
            b2: Tensor::zeros(1, out),
        }
    }

    pub fn prompt_length(&self) -> usize {
        self.embedding.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        alloc::vec![&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        alloc::vec![
            &mut self.embedding,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2
        ]
    }

    /// Registers the network and returns `(trainable leaves, per-layer prefixes)`.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> (Vec<Var>, Vec<PrefixVars>) {
        let leaves: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        let [e, w1, b1, w2, b2] = [leaves[0], leaves[1], leaves[2], leaves[3], leaves[4]];
        let hidden = tape.matmul(e, w1);
        let hidden = tape.add_row(hidden, b1);
        let hidden = tape.tanh(hidden);
        let out = tape.matmul(hidden, w2);
        let out = tape.add_row(out, b2);
        let h = self.hidden;
        let prefixes = (0..self.num_layers)
            .map(|l| PrefixVars {
                key: tape.slice_cols(out, l * 2 * h, h),
                value: tape.slice_cols(out, l * 2 * h + h, h),
            })
            .collect();
        (leaves, prefixes)
    }

    pub fn materialize(&self) -> PromptBank {
        let mut tape = Tape::new();
        let (_, prefixes) = self.register(&mut tape, false);
        PromptBank {
            prompt_length: self.prompt_length(),
            hidden: self.hidden,
            layers: prefixes
                .iter()
                .map(|p| PrefixLayer {
                    key: tape.value(p.key).clone(),
                    value: tape.value(p.value).clone(),
                })
                .collect(),
        }
    }
}

/// What the optimizer actually updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PromptParams {
    Direct(PromptBank),
    Reparam(ReparamPrompt),
}

impl PromptParams {
    pub fn prompt_length(&self) -> usize {
        match self {
            PromptParams::Direct(b) => b.prompt_length(),
            PromptParams::Reparam(r) => r.prompt_length(),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> (Vec<Var>, Vec<PrefixVars>) {
        match self {
            PromptParams::Direct(b) => {
                let prefixes = b.register(tape, true);
                let leaves = prefixes.iter().flat_map(|p| [p.key, p.value]).collect();
                (leaves, prefixes)
            }
            PromptParams::Reparam(r) => r.register(tape, true),
        }
    }

    /// Tensors in the same order as the leaves returned by [`Self::register`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            PromptParams::Direct(b) => b.tensors(),
            PromptParams::Reparam(r) => r.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            PromptParams::Direct(b) => b.tensors_mut(),
            PromptParams::Reparam(r) => r.tensors_mut(),
        }
    }

    pub fn materialize(&self) -> PromptBank {
        match self {
            PromptParams::Direct(b) => b.clone(),
            PromptParams::Reparam(r) => r.materialize(),
        }
    }

    /// Extra parameters of the reparameterization network, if any.
    pub fn reparam_parameter_count(&self) -> usize {
        match self {
            PromptParams::Direct(_) => 0,
            PromptParams::Reparam(r) => r.parameter_count(),
        }
    }
}
