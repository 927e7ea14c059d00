//! Linear task head on top of the pooled representation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderHandle;
use crate::error::{Error, Result};
use crate::prompt::PromptParams;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification { num_classes: usize },
}

impl TaskKind {
    pub fn outputs(self) -> usize {
        match self {
            TaskKind::Regression => 1,
            TaskKind::Classification { num_classes } => num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHead {
    pub kind: TaskKind,
    /// `hidden × outputs`
    pub weight: Tensor,
    /// `1 × outputs`
    pub bias: Tensor,
}

impl TaskHead {
    pub fn init<R: Rng + ?Sized>(hidden: usize, kind: TaskKind, rng: &mut R) -> Self {
        Self {
            kind,
            weight: Tensor::randn(hidden, kind.outputs(), 0.02, rng),
            bias: Tensor::zeros(1, kind.outputs()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        alloc::vec![&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        alloc::vec![&mut self.weight, &mut self.bias]
    }

    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> (Var, Var) {
        (
            tape.leaf(self.weight.clone(), requires_grad),
            tape.leaf(self.bias.clone(), requires_grad),
        )
    }

    pub fn apply(tape: &mut Tape, params: (Var, Var), pooled: Var) -> Var {
        let out = tape.matmul(pooled, params.0);
        tape.add_row(out, params.1)
    }

    /// Plain forward on one representation.
    pub fn predict(&self, representation: &[f64]) -> Vec<f64> {
        let h = Tensor::row_vector(representation.to_vec());
        let mut out = h.matmul(&self.weight);
        out.add_assign(&self.bias);
        out.into_vec()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        alloc::vec![("head.weight".into(), &self.weight), ("head.bias".into(), &self.bias)]
    }

    pub fn from_named(kind: TaskKind, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let weight = tensors
            .remove("head.weight")
            .ok_or_else(|| Error::MissingTensor("head.weight".into()))?;
        let bias = tensors
            .remove("head.bias")
            .ok_or_else(|| Error::MissingTensor("head.bias".into()))?;
        if weight.cols() != kind.outputs() || bias.shape() != (1, kind.outputs()) {
            return Err(Error::DimensionMismatch {
                what: "head outputs".into(),
                expected: kind.outputs(),
                found: weight.cols(),
            });
        }
        Ok(Self { kind, weight, bias })
    }
}

/// Parameter counts split by owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCensus {
    pub backbone: usize,
    /// Always zero: the backbone is frozen.
    pub backbone_trainable: usize,
    pub prompt: usize,
    /// Reparameterization network, trained then discarded.
    pub prompt_reparam: usize,
    pub head: usize,
}

impl ParameterCensus {
    pub fn trainable(&self) -> usize {
        self.backbone_trainable + self.prompt + self.prompt_reparam + self.head
    }
}

pub fn trainable_parameters(
    handle: &EncoderHandle,
    prompt: &PromptParams,
    head: &TaskHead,
) -> ParameterCensus {
    ParameterCensus {
        backbone: handle.backbone().parameter_count(),
        backbone_trainable: if handle.is_frozen() {
            0
        } else {
            handle.backbone().parameter_count()
        },
        prompt: match prompt {
            PromptParams::Direct(b) => b.parameter_count(),
            PromptParams::Reparam(r) => {
                handle.num_layers() * 2 * r.prompt_length() * handle.hidden_size()
            }
        },
        prompt_reparam: prompt.reparam_parameter_count(),
        head: head.parameter_count(),
    }
}
