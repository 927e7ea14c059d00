//! Debias-while-prompt-tuning primitives.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without `std` (an allocator is required). File formats, checkpoints and the
//! command line live in the `ptdebias` companion crate.
//!
//! The pieces, bottom-up:
//!
//! * [`lexicon`] - bias-attribute term pairs and counterfactual augmentation.
//! * [`tensor`] / [`tape`] - a small dense matrix type and reverse-mode autodiff.
//! * [`encoder`] / [`prompt`] / [`head`] - a frozen transformer encoder with
//!   trainable per-layer prefix prompts and a task head.
//! * [`objectives`] - task, counterfactual contrastive and ablation losses.
//! * [`benchmark`] / [`metrics`] - extrinsic bias benchmark generators and metrics.
//! * [`toy`] / [`train`] - a gender-skewed synthetic task and the training loop.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod benchmark;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod lexicon;
pub mod math;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod prompt;
pub mod tape;
pub mod tensor;
pub mod tokenizer;
pub mod toy;
pub mod train;

pub use crate::error::{Error, Result};
