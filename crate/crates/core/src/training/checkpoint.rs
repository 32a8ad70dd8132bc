//! Binary checkpoint container.
//!
//! Layout (little endian): the magic bytes, a `u32` tensor count, then per
//! tensor a `u16` name length, the UTF-8 name, a `u8` dtype tag, a `u8` rank,
//! `rank` × `u64` dims and the raw elements; finally a `u64` length and a JSON
//! metadata blob. Model weights are stored as `f32`, normalization buffers as
//! `f64`, so reloading reproduces every value bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{TrainConfig, TrainingError};
use crate::features::{Encoder, EncoderConfig, FeatureExtractor, FeatureKind, PretrainConfig, PretrainReport};
use crate::models::{ModelConfig, Normalizer, SpacingModel};
use crate::numerics::{DType, ParameterStore, Tensor};

pub const MAGIC: &[u8; 5] = b"KERN1";

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

/// Named tensors plus a JSON metadata value.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub tensors: Vec<(String, AnyTensor)>,
    pub meta: Value,
}

impl TensorFile {
    fn take(&mut self, name: &str) -> Result<AnyTensor, TrainingError> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| TrainingError::Format(format!("missing tensor {name:?}")))?;
        Ok(self.tensors.remove(pos).1)
    }

    fn take_f64(&mut self, name: &str) -> Result<Vec<f64>, TrainingError> {
        match self.take(name)? {
            AnyTensor::F64(t) => Ok(t.into_data()),
            AnyTensor::F32(_) => Err(TrainingError::Format(format!("{name:?} must be f64"))),
        }
    }

    /// Removes every `f32` tensor whose name starts with `prefix`.
    fn take_store(&mut self, prefix: &str) -> Result<ParameterStore<f32>, TrainingError> {
        let mut store = ParameterStore::new();
        let mut rest = Vec::new();
        for (name, t) in self.tensors.drain(..) {
            match t {
                AnyTensor::F32(t) if name.starts_with(prefix) => {
                    store.insert(name, t)?;
                }
                other => rest.push((name, other)),
            }
        }
        self.tensors = rest;
        Ok(store)
    }
}

pub fn encode_tensor_file(file: &TensorFile) -> Result<Vec<u8>, TrainingError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(file.tensors.len() as u32).to_le_bytes());
    for (name, t) in &file.tensors {
        let name_len =
            u16::try_from(name.len()).map_err(|_| TrainingError::Format(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype().tag());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match t {
            AnyTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            AnyTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    let meta = serde_json::to_vec(&file.meta).map_err(|e| TrainingError::Format(e.to_string()))?;
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainingError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TrainingError::TruncatedPayload(format!("{what}: need {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const K: usize>(&mut self, what: &str) -> Result<[u8; K], TrainingError> {
        Ok(self.take(K, what)?.try_into().expect("slice length"))
    }
}

pub fn decode_tensor_file(bytes: &[u8]) -> Result<TensorFile, TrainingError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(TrainingError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let count = u32::from_le_bytes(r.array("tensor count")?);
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| TrainingError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let [tag] = r.array::<1>("dtype")?;
        let dtype = DType::from_tag(tag).ok_or(TrainingError::UnknownDtype(tag))?;
        let [rank] = r.array::<1>("rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(r.array("dim")?) as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| TrainingError::Format(format!("tensor {name:?} is too large")))?;
        let raw = r.take(
            count
                .checked_mul(dtype.size())
                .ok_or_else(|| TrainingError::Format("size overflow".into()))?,
            &name,
        )?;
        let tensor = match dtype {
            DType::F32 => AnyTensor::F32(Tensor::new(
                shape,
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )?),
            DType::F64 => AnyTensor::F64(Tensor::new(
                shape,
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )?),
        };
        tensors.push((name, tensor));
    }
    let meta_len = u64::from_le_bytes(r.array("metadata length")?) as usize;
    let meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| TrainingError::Format(format!("metadata: {e}")))?;
    if r.pos != bytes.len() {
        return Err(TrainingError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(TensorFile { tensors, meta })
}

pub fn write_tensor_file(path: &Path, file: &TensorFile) -> Result<(), TrainingError> {
    let bytes = encode_tensor_file(file)?;
    std::fs::write(path, bytes).map_err(|source| TrainingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile, TrainingError> {
    let bytes = std::fs::read(path).map_err(|source| TrainingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_tensor_file(&bytes)
}

/// A trained spacing model together with everything needed to featurize
/// new fonts.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SpacingModel<f32>,
    pub encoder: Option<Encoder>,
    pub feature_kind: FeatureKind,
    pub image_size: usize,
    pub train_config: Option<TrainConfig>,
    pub best_val_loss: f64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn extractor(&self) -> Result<FeatureExtractor, TrainingError> {
        super::extractor_for(self.feature_kind, self.image_size, self.encoder.as_ref())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Meta {
    Model {
        model_config: ModelConfig,
        feature_kind: FeatureKind,
        image_size: usize,
        encoder_config: Option<EncoderConfig>,
        train_config: Option<TrainConfig>,
        best_val_loss: Option<f64>,
        epoch: usize,
    },
    Encoder {
        encoder_config: EncoderConfig,
        frozen: bool,
        pretrain_config: Option<PretrainConfig>,
        report: Option<PretrainReport>,
    },
}

fn meta_value(meta: &Meta) -> Result<Value, TrainingError> {
    serde_json::to_value(meta).map_err(|e| TrainingError::Format(e.to_string()))
}

fn parse_meta(value: Value) -> Result<Meta, TrainingError> {
    serde_json::from_value(value).map_err(|e| TrainingError::Format(format!("metadata: {e}")))
}

fn store_tensors(store: &ParameterStore<f32>) -> impl Iterator<Item = (String, AnyTensor)> + '_ {
    store.iter().map(|(n, t)| (n.to_string(), AnyTensor::F32(t.clone())))
}

fn f64_tensor(values: &[f64]) -> Result<AnyTensor, TrainingError> {
    Ok(AnyTensor::F64(Tensor::from_f64(&[values.len()], values)?))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainingError> {
    let norm = &ckpt.model.norm;
    let mut tensors: Vec<(String, AnyTensor)> = store_tensors(&ckpt.model.params).collect();
    tensors.push(("buf.feature_mean".into(), f64_tensor(&norm.feature_mean)?));
    tensors.push(("buf.feature_std".into(), f64_tensor(&norm.feature_std)?));
    tensors.push((
        "buf.target".into(),
        f64_tensor(&[norm.target_shift, norm.target_scale])?,
    ));
    if let Some(enc) = &ckpt.encoder {
        tensors.extend(store_tensors(enc.params()));
    }
    let meta = Meta::Model {
        model_config: ckpt.model.config.clone(),
        feature_kind: ckpt.feature_kind,
        image_size: ckpt.image_size,
        encoder_config: ckpt.encoder.as_ref().map(|e| e.config().clone()),
        train_config: ckpt.train_config.clone(),
        best_val_loss: Some(ckpt.best_val_loss).filter(|v| v.is_finite()),
        epoch: ckpt.epoch,
    };
    write_tensor_file(
        path,
        &TensorFile {
            tensors,
            meta: meta_value(&meta)?,
        },
    )
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainingError> {
    let mut file = read_tensor_file(path)?;
    let Meta::Model {
        model_config,
        feature_kind,
        image_size,
        encoder_config,
        train_config,
        best_val_loss,
        epoch,
    } = parse_meta(file.meta.clone())?
    else {
        return Err(TrainingError::Format(
            "expected a model checkpoint, found an encoder".into(),
        ));
    };
    let feature_mean = file.take_f64("buf.feature_mean")?;
    let feature_std = file.take_f64("buf.feature_std")?;
    let target = file.take_f64("buf.target")?;
    let [target_shift, target_scale] = target[..] else {
        return Err(TrainingError::Format("buf.target must hold two values".into()));
    };
    let encoder = match encoder_config {
        Some(cfg) => Some(Encoder::from_parts(cfg, file.take_store("enc.")?, true)?),
        None => None,
    };
    let params = file.take_store("")?;
    let norm = Normalizer {
        feature_mean,
        feature_std,
        target_shift,
        target_scale,
    };
    let model = SpacingModel::from_parts(model_config, params, norm)?;
    if let Some((name, _)) = file.tensors.first() {
        return Err(TrainingError::Format(format!("unexpected tensor {name:?}")));
    }
    Ok(Checkpoint {
        model,
        encoder,
        feature_kind,
        image_size,
        train_config,
        best_val_loss: best_val_loss.unwrap_or(f64::NAN),
        epoch,
    })
}

/// A pretrained image encoder.
#[derive(Clone, Debug)]
pub struct EncoderCheckpoint {
    pub encoder: Encoder,
    pub pretrain_config: Option<PretrainConfig>,
    pub report: Option<PretrainReport>,
}

pub fn save_encoder(ckpt: &EncoderCheckpoint, path: &Path) -> Result<(), TrainingError> {
    let meta = Meta::Encoder {
        encoder_config: ckpt.encoder.config().clone(),
        frozen: ckpt.encoder.is_frozen(),
        pretrain_config: ckpt.pretrain_config.clone(),
        report: ckpt.report.clone(),
    };
    write_tensor_file(
        path,
        &TensorFile {
            tensors: store_tensors(ckpt.encoder.params()).collect(),
            meta: meta_value(&meta)?,
        },
    )
}

pub fn load_encoder(path: &Path) -> Result<EncoderCheckpoint, TrainingError> {
    let mut file = read_tensor_file(path)?;
    let Meta::Encoder {
        encoder_config,
        frozen,
        pretrain_config,
        report,
    } = parse_meta(file.meta.clone())?
    else {
        return Err(TrainingError::Format(
            "expected an encoder checkpoint, found a model".into(),
        ));
    };
    let params = file.take_store("")?;
    Ok(EncoderCheckpoint {
        encoder: Encoder::from_parts(encoder_config, params, frozen)?,
        pretrain_config,
        report,
    })
}
