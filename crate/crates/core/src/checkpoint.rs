//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KETMCKPT" | version: u32 | header_len: u64 | header: JSON
//!            | tensor blobs, in header order, raw LE floats
//!            | sha256 of every preceding byte
//! ```
//!
//! The header holds the element type, configurations, vocabulary, label map,
//! the tensor table (name, shape, role), optimizer counters and the random
//! stream position, so a reloaded trainer takes exactly the step the original
//! would have taken.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LabelMap;
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Ketm, ModelConfig};
use crate::param::ParamStore;
use crate::tensor::{DType, Real, Tensor};
use crate::train::{Adam, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"KETMCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

/// Position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    /// 32 bytes, hex.
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128 portably.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Integrity("malformed random-stream state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: DType,
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vocabulary,
    labels: LabelMap,
    epoch: usize,
    optimizer: Option<OptimizerHeader>,
    rng: Option<RngState>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or serve predictions.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub labels: LabelMap,
    pub params: ParamStore<T>,
    pub optimizer: Option<Adam<T>>,
    pub rng: Option<RngState>,
    pub epoch: usize,
}

impl<T: Real> Checkpoint<T> {
    /// Snapshot of a trainer, including optimizer and random-stream state.
    pub fn from_trainer(trainer: &Trainer<T>, vocab: &Vocabulary, labels: &LabelMap) -> Self {
        Checkpoint {
            model: trainer.model.config.clone(),
            train: trainer.config.clone(),
            vocab: vocab.clone(),
            labels: labels.clone(),
            params: trainer.store.clone(),
            optimizer: Some(trainer.optimizer.clone()),
            rng: Some(RngState::capture(&trainer.rng)),
            epoch: trainer.epoch,
        }
    }

    /// Rebuilds the network structure and checks the stored parameters
    /// match it name for name and shape for shape.
    pub fn build_model(&self) -> Result<Ketm> {
        let mut scratch = ParamStore::<T>::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let model = Ketm::new(self.model.clone(), &mut scratch, &mut rng)?;
        if scratch.len() != self.params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                scratch.len()
            )));
        }
        for (want, have) in scratch.iter().zip(self.params.iter()) {
            if want.name != have.name || want.value.shape() != have.value.shape() {
                return Err(Error::Integrity(format!(
                    "tensor {:?} {:?} does not match expected {:?} {:?}",
                    have.name,
                    have.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(model)
    }

    /// Resumes a trainer exactly where the snapshot was taken.
    pub fn into_trainer(self) -> Result<Trainer<T>> {
        let model = self.build_model()?;
        let optimizer = self
            .optimizer
            .ok_or_else(|| Error::Integrity("checkpoint has no optimizer state".into()))?;
        let rng = self
            .rng
            .as_ref()
            .ok_or_else(|| Error::Integrity("checkpoint has no random-stream state".into()))?
            .restore()?;
        Ok(Trainer {
            model,
            store: self.params,
            optimizer,
            rng,
            config: self.train,
            epoch: self.epoch,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut blobs: Vec<&Tensor<T>> = Vec::new();
        for p in self.params.iter() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                role: Role::Param,
            });
            blobs.push(&p.value);
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != self.params.len() || opt.v.len() != self.params.len() {
                return Err(Error::Argument(
                    "optimizer state does not match parameters".into(),
                ));
            }
            for (role, moments) in [(Role::AdamM, &opt.m), (Role::AdamV, &opt.v)] {
                for (p, t) in self.params.iter().zip(moments) {
                    tensors.push(TensorEntry {
                        name: p.name.clone(),
                        shape: t.shape().to_vec(),
                        role,
                    });
                    blobs.push(t);
                }
            }
        }
        let header = Header {
            dtype: T::DTYPE,
            model: self.model.clone(),
            train: self.train.clone(),
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            epoch: self.epoch,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                step: o.step,
            }),
            rng: self.rng.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header)
            .map_err(|e| Error::Argument(format!("cannot encode checkpoint header: {e}")))?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in blobs {
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        if bytes.len() < PREFIX_LEN + DIGEST_LEN {
            return Err(Error::Integrity("file truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity(
                "checksum mismatch (truncated or corrupted file)".into(),
            ));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = PREFIX_LEN
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Integrity("header runs past end of file".into()))?;
        let header: Header = serde_json::from_slice(&body[PREFIX_LEN..header_end])
            .map_err(|e| Error::Integrity(format!("malformed header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(Error::Config(format!(
                "checkpoint stores {} tensors, requested {}",
                header.dtype,
                T::DTYPE
            )));
        }

        let width = T::DTYPE.size_of();
        let mut pos = header_end;
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = pos + n * width;
            if end > body.len() {
                return Err(Error::Integrity(format!(
                    "tensor {:?} runs past end of file",
                    entry.name
                )));
            }
            let data = body[pos..end].chunks_exact(width).map(T::read_le).collect();
            pos = end;
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| Error::Integrity(format!("tensor {:?}: {e}", entry.name)))?;
            match entry.role {
                Role::Param => {
                    params.add(entry.name.clone(), t)?;
                }
                Role::AdamM => m.push(t),
                Role::AdamV => v.push(t),
            }
        }
        if pos != body.len() {
            return Err(Error::Integrity(format!(
                "{} trailing bytes",
                body.len() - pos
            )));
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                if m.len() != params.len() || v.len() != params.len() {
                    return Err(Error::Integrity(
                        "optimizer moments do not match parameters".into(),
                    ));
                }
                Some(Adam {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    step: o.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            vocab: header.vocab,
            labels: header.labels,
            params,
            optimizer,
            rng: header.rng,
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let _: [u64; 5] = rng.gen();
        let mut restored = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.gen::<u64>(), restored.gen::<u64>());
    }

    #[test]
    fn garbage_is_not_a_checkpoint() {
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(b"hello"),
            Err(Error::Integrity(_))
        ));
    }
}
