//! Checkpoint directories: backbone weights, prompt bank, task head and a
//! JSON manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ptdebias_core::encoder::{build_encoder, Backbone, BackboneSource, EncoderConfig, EncoderHandle, Pooling};
use ptdebias_core::head::{TaskHead, TaskKind};
use ptdebias_core::prompt::PromptBank;
use ptdebias_core::tensor::Tensor;
use ptdebias_core::train::Method;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TaskName;
use crate::error::{IoContext, Result, RunnerError};
use crate::io::{read_json, write_json};

pub const BACKBONE_TENSORS: &str = "backbone.safetensors";
pub const BACKBONE_META: &str = "backbone.json";
pub const PROMPT_TENSORS: &str = "prompt.safetensors";
pub const HEAD_TENSORS: &str = "head.safetensors";
pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

fn tensor_err(path: &Path, e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Tensors(format!("{}: {e}", path.display()))
}

/// Writes 2-D `f64` tensors to a safetensors file.
pub fn write_tensors(path: &Path, named: &[(String, &Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = named
        .iter()
        .map(|(name, t)| {
            let data = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), data, vec![t.rows(), t.cols()])
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, data, shape)| {
            TensorView::new(Dtype::F64, shape.clone(), data)
                .map(|v| (name.as_str(), v))
                .map_err(|e| tensor_err(path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::tensor::serialize_to_file(views, None, path).map_err(|e| tensor_err(path, e))
}

/// Reads `f64` or `f32` tensors of rank 1 or 2 (rank 1 becomes a row).
pub fn read_tensors(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let buffer = std::fs::read(path).at(path)?;
    let st = SafeTensors::deserialize(&buffer).map_err(|e| tensor_err(path, e))?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        let data: Vec<f64> = match view.dtype() {
            Dtype::F64 => view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::F32 => view
                .data()
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
                .collect(),
            other => return Err(tensor_err(path, format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        let (rows, cols) = match *view.shape() {
            [n] => (1, n),
            [r, c] => (r, c),
            ref s => return Err(tensor_err(path, format!("tensor `{name}` has rank {}", s.len()))),
        };
        out.insert(name, Tensor::from_vec(rows, cols, data));
    }
    Ok(out)
}

/// SHA-256 over every backbone tensor (name, shape, little-endian values).
pub fn backbone_digest(backbone: &Backbone) -> String {
    let mut h = Sha256::new();
    for (name, t) in backbone.named_tensors() {
        h.update(name.as_bytes());
        h.update((t.rows() as u64).to_le_bytes());
        h.update((t.cols() as u64).to_le_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneMeta {
    pub id: String,
    pub config: EncoderConfig,
    pub digest: String,
}

/// Writes a backbone-only directory usable as `backbone.kind = "checkpoint"`.
pub fn save_backbone(dir: &Path, handle: &EncoderHandle) -> Result<BackboneMeta> {
    std::fs::create_dir_all(dir).at(dir)?;
    write_tensors(&dir.join(BACKBONE_TENSORS), &handle.backbone().named_tensors())?;
    let meta = BackboneMeta {
        id: handle.id().to_string(),
        config: handle.config().clone(),
        digest: backbone_digest(handle.backbone()),
    };
    write_json(&dir.join(BACKBONE_META), &meta)?;
    Ok(meta)
}

pub fn read_backbone_meta(dir: &Path) -> Result<BackboneMeta> {
    read_json(&dir.join(BACKBONE_META))
}

pub fn load_backbone(dir: &Path) -> Result<EncoderHandle> {
    let meta = read_backbone_meta(dir)?;
    let tensors = read_tensors(&dir.join(BACKBONE_TENSORS))?;
    let handle = build_encoder(BackboneSource::Loaded {
        id: meta.id.clone(),
        config: meta.config,
        tensors,
    })?;
    let digest = backbone_digest(handle.backbone());
    if digest != meta.digest {
        return Err(RunnerError::IncompatibleBackbone(format!(
            "{}: weights do not match the recorded digest",
            dir.display()
        )));
    }
    Ok(handle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub backbone: BackboneMeta,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub prompt_length: usize,
    pub pooling: Pooling,
    pub max_len: usize,
    pub task: TaskName,
    pub task_kind: TaskKind,
    /// Class labels for classification heads, in output order.
    pub classes: Option<Vec<String>>,
    pub method: Method,
    pub lexicon_sha256: String,
    pub config_hash: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub bank: PromptBank,
    pub head: TaskHead,
}

pub fn save_checkpoint(dir: &Path, handle: &EncoderHandle, ckpt: &Checkpoint) -> Result<PathBuf> {
    save_backbone(dir, handle)?;
    write_tensors(&dir.join(PROMPT_TENSORS), &ckpt.bank.named_tensors())?;
    write_tensors(&dir.join(HEAD_TENSORS), &ckpt.head.named_tensors())?;
    write_json(&dir.join(MANIFEST), &ckpt.manifest)?;
    Ok(dir.to_path_buf())
}

pub fn load_checkpoint(dir: &Path) -> Result<(EncoderHandle, Checkpoint)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(RunnerError::Parse {
            path: dir.join(MANIFEST),
            message: format!("unsupported format version {}", manifest.format_version),
        });
    }
    let handle = load_backbone(dir)?;
    let bank = PromptBank::from_named(manifest.num_layers, read_tensors(&dir.join(PROMPT_TENSORS))?)?;
    handle.check_compatible(&bank)?;
    if bank.prompt_length() != manifest.prompt_length {
        return Err(RunnerError::IncompatibleBackbone(format!(
            "prompt length {} does not match manifest {}",
            bank.prompt_length(),
            manifest.prompt_length
        )));
    }
    let head = TaskHead::from_named(manifest.task_kind, read_tensors(&dir.join(HEAD_TENSORS))?)?;
    Ok((handle, Checkpoint { manifest, bank, head }))
}
