//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `JNNCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! parameter value as a little-endian `f64` in `shared_parameters` order,
//! followed by the momentum buffers in the same order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{hex, ModelSpec};
use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"JNNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` word position, as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint(format!("malformed RNG state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let pos: u128 = self.word_pos.parse().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub config_digest: String,
    /// Epochs completed.
    pub epoch: usize,
    /// Training sampler RNG after `epoch` epochs.
    pub rng: RngState,
    pub params: Vec<ParamInfo>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<Tensor>,
    pub momentum: Vec<Tensor>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    config_digest: &str,
    epoch: usize,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let params = model.shared_parameters();
    let header = CheckpointHeader {
        spec: model.spec(),
        config_digest: config_digest.to_string(),
        epoch,
        rng: RngState::capture(rng),
        params: params
            .ids()
            .map(|id| ParamInfo {
                name: params.name(id).to_string(),
                shape: params.value(id).shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = params.num_values();
    let mut bytes = Vec::with_capacity(20 + json.len() + 16 * n);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for p in params.iter() {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in params.iter() {
        for v in p.momentum_buf.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!(
            "truncated: {what} needs {n} bytes, {} remain",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_block(bytes: &mut &[u8], infos: &[ParamInfo], what: &str) -> Result<Vec<Tensor>> {
    infos
        .iter()
        .map(|info| {
            let n: usize = info.shape.iter().product();
            let raw = take(bytes, 8 * n, &format!("{what} of {}", info.name))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Tensor::new(info.shape.clone(), data)
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let all = fs::read(path)?;
    let mut bytes = &all[..];
    if take(&mut bytes, 8, "magic")? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().unwrap());
    let json = take(&mut bytes, len as usize, "header")?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let values = read_block(&mut bytes, &header.params, "values")?;
    let momentum = read_block(&mut bytes, &header.params, "momentum")?;
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    Ok(Checkpoint {
        header,
        values,
        momentum,
    })
}

impl Checkpoint {
    /// Refuses a checkpoint trained under a different architecture.
    pub fn check_digest(&self, expected: &str) -> Result<()> {
        if self.header.config_digest != expected {
            return Err(Error::DigestMismatch {
                stored: self.header.config_digest.clone(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }

    /// Rebuilds the stored network and installs its parameters.
    pub fn to_model(&self) -> Result<Model> {
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::build(&self.header.spec, &mut scratch)?;
        let params = model.net_mut().params_mut();
        if params.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, its spec builds {}",
                self.values.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for ((id, v), m) in ids.into_iter().zip(&self.values).zip(&self.momentum) {
            let name = params.name(id).to_string();
            let p = params.get_mut(id);
            if p.value.shape() != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} is {:?} in the checkpoint but {:?} in the network",
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
            p.momentum_buf = m.clone();
        }
        Ok(model)
    }
}
