//! Binary checkpoint container.
//!
//! ```text
//! magic        8 bytes   "LSTMCKPT"
//! version      u32 LE    FORMAT_VERSION
//! meta_len     u64 LE
//! meta         meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! n_tensors    u32 LE
//! per tensor:
//!   name_len   u16 LE, then name bytes (UTF-8)
//!   ndim       u8, then ndim × u64 LE dimensions
//!   payload    prod(dims) × f64 LE, row-major
//! ```
//!
//! Tensor names are `w_x`, `w_h`, `bias`, `head_w`, `head_b`, `embedding`
//! (token models only) and, when optimizer state is present, `adam.m.<name>`
//! and `adam.v.<name>` for every trainable tensor.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Embedding, LstmModel, ParamId};
use crate::optimizer::{AdamConfig, AdamState};
use crate::report::toolkit_version;
use crate::trainer::{EpochRecord, TrainConfig};

pub const MAGIC: &[u8; 8] = b"LSTMCKPT";
pub const FORMAT_VERSION: u32 = 1;
const EMBEDDING: &str = "embedding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub toolkit_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub config_fingerprint: String,
    pub train_fingerprint: Option<String>,
    pub history: Vec<EpochRecord>,
    /// Token list for token models, id order.
    pub vocabulary: Option<Vec<String>>,
    pub embedding_trainable: Option<bool>,
    pub adam: Option<AdamMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: LstmModel,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, model: LstmModel) -> Self {
        Self {
            meta: CheckpointMeta {
                toolkit_version: toolkit_version(),
                seed: config.seed,
                config: config.clone(),
                config_fingerprint: config.fingerprint(),
                train_fingerprint: None,
                history: Vec::new(),
                vocabulary: None,
                embedding_trainable: model.embedding.as_ref().map(|e| e.trainable),
                adam: None,
            },
            model,
            optimizer: None,
        }
    }

    pub fn with_optimizer(mut self, optimizer: AdamState) -> Self {
        self.meta.adam = Some(AdamMeta {
            config: optimizer.config,
            step: optimizer.step,
        });
        self.optimizer = Some(optimizer);
        self
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let m = &self.model;
        let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = ParamId::ALL
            .iter()
            .map(|&id| (id.name().to_string(), m.param_shape(id), m.param(id).to_vec()))
            .collect();
        if let Some(e) = &m.embedding {
            out.push((EMBEDDING.into(), e.table.shape().to_vec(), e.table.iter().copied().collect()));
        }
        if let Some(opt) = &self.optimizer {
            for (slot, &id) in ParamId::ALL.iter().enumerate() {
                let shape = m.param_shape(id);
                out.push((format!("adam.m.{}", id.name()), shape.clone(), opt.first_moment[slot].clone()));
                out.push((format!("adam.v.{}", id.name()), shape, opt.second_moment[slot].clone()));
            }
            if let (Some(first), Some(second)) = (&opt.embedding_first, &opt.embedding_second) {
                for (kind, t) in [("m", first), ("v", second)] {
                    out.push((format!("adam.{kind}.{EMBEDDING}"), t.shape().to_vec(), t.iter().copied().collect()));
                }
            }
        }
        out
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        let tensors = self.tensors();
        out.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, shape, values) in tensors {
            out.write_all(&(name.len() as u16).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&[shape.len() as u8])?;
            for d in shape {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r, "version")?);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = u64::from_le_bytes(read_array(&mut r, "metadata length")?);
        let meta_bytes = read_vec(&mut r, meta_len, "metadata")?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::Checkpoint(format!("invalid metadata: {e}")))?;

        let count = u32::from_le_bytes(read_array(&mut r, "tensor count")?);
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(&mut r, "tensor name length")?);
            let name = String::from_utf8(read_vec(&mut r, name_len as u64, "tensor name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let [ndim] = read_array::<1>(&mut r, "tensor rank")?;
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(read_array(&mut r, "tensor dimension")?) as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let bytes = read_vec(&mut r, (n as u64) * 8, &name)?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if tensors.insert(name.clone(), (shape, values)).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        build(meta, tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(File::open(path)?)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, what)?;
    Ok(buf)
}

fn read_vec(r: &mut impl Read, len: u64, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    Ok(buf)
}

type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn take(tensors: &mut TensorMap, name: &str, expected: Option<&[usize]>) -> Result<(Vec<usize>, Vec<f64>)> {
    let (shape, values) = tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
    if let Some(expected) = expected {
        if shape != expected {
            return Err(Error::ShapeMismatch {
                tensor: name.into(),
                expected: expected.to_vec(),
                found: shape,
            });
        }
    }
    Ok((shape, values))
}

fn matrix(name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<Array2<f64>> {
    match shape[..] {
        [r, c] => Ok(Array2::from_shape_vec((r, c), values).expect("length checked")),
        _ => Err(Error::Checkpoint(format!("tensor `{name}` must be 2-D, has shape {shape:?}"))),
    }
}

fn build(meta: CheckpointMeta, mut tensors: TensorMap) -> Result<Checkpoint> {
    let (shape, w_x) = take(&mut tensors, "w_x", None)?;
    let w_x = matrix("w_x", shape, w_x)?;
    let (g, input) = w_x.dim();
    if g == 0 || g % 4 != 0 {
        return Err(Error::Checkpoint(format!("w_x has {g} rows, not a positive multiple of 4")));
    }
    let h = g / 4;
    let mut model = LstmModel::zeros(input, h);
    model.w_x = w_x;
    for id in &ParamId::ALL[1..] {
        let expected = model.param_shape(*id);
        let (_, values) = take(&mut tensors, id.name(), Some(&expected))?;
        model.param_mut(*id).copy_from_slice(&values);
    }
    if let Some(trainable) = meta.embedding_trainable {
        let (shape, values) = take(&mut tensors, EMBEDDING, None)?;
        let table = matrix(EMBEDDING, shape, values)?;
        if table.ncols() != input {
            return Err(Error::ShapeMismatch {
                tensor: EMBEDDING.into(),
                expected: vec![table.nrows(), input],
                found: table.shape().to_vec(),
            });
        }
        model.embedding = Some(Embedding { table, trainable });
    }

    let optimizer = match &meta.adam {
        None => None,
        Some(adam) => {
            let mut state = AdamState::new(&model, adam.config);
            state.step = adam.step;
            for (slot, &id) in ParamId::ALL.iter().enumerate() {
                let expected = model.param_shape(id);
                state.first_moment[slot] = take(&mut tensors, &format!("adam.m.{}", id.name()), Some(&expected))?.1;
                state.second_moment[slot] = take(&mut tensors, &format!("adam.v.{}", id.name()), Some(&expected))?.1;
            }
            if state.embedding_first.is_some() {
                let shape = model.embedding.as_ref().expect("trainable embedding").table.shape().to_vec();
                let m = take(&mut tensors, "adam.m.embedding", Some(&shape))?;
                let v = take(&mut tensors, "adam.v.embedding", Some(&shape))?;
                state.embedding_first = Some(matrix(EMBEDDING, m.0, m.1)?);
                state.embedding_second = Some(matrix(EMBEDDING, v.0, v.1)?);
            }
            Some(state)
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
    }
    model.validate()?;
    Ok(Checkpoint { meta, model, optimizer })
}
