//! Binary checkpoint format.
//!
//! ```text
//! "FLSN" | version: u32 | tensor count: u32 |
//!   per tensor: name length: u32 | UTF-8 name | rank: u32 | dims: u32 × rank | f32 payload
//! ```
//!
//! All integers and floats are little-endian. Besides the trainable tensors
//! and batch-norm running statistics, a checkpoint carries `meta.*` scalars.

use std::path::Path;

use crate::error::{Error, Result};

use super::network::{Network, PARAM_NAMES, RUNNING_STAT_NAMES};
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FLSN";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_EPOCHS: &str = "meta.epochs_run";
const META_VAL_LOSS: &str = "meta.best_val_loss";
const META_BN_MOMENTUM: &str = "meta.bn_momentum";
const META_BN_EPS: &str = "meta.bn_eps";

/// Training metadata stored alongside the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub epochs_run: u32,
    pub best_val_loss: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn encode_checkpoint(net: &Network<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let scalar = |v: f32| Tensor::from_vec(&[1], vec![v]).expect("scalar tensor");
    let mut tensors: Vec<(&str, Tensor<f32>)> = Vec::new();
    for (name, t) in PARAM_NAMES.iter().zip(net.params()) {
        tensors.push((name, t.clone()));
    }
    for (name, t) in RUNNING_STAT_NAMES.iter().zip(net.running_stats()) {
        tensors.push((name, t.clone()));
    }
    tensors.push((META_EPOCHS, scalar(meta.epochs_run as f32)));
    tensors.push((META_VAL_LOSS, scalar(meta.best_val_loss)));
    tensors.push((META_BN_MOMENTUM, scalar(net.bn1.momentum as f32)));
    tensors.push((META_BN_EPS, scalar(net.bn1.eps as f32)));

    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses the tensor list without interpreting names.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "bad magic, not an FLSN checkpoint".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has bad dims {dims:?}")))?;
        let payload = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} too large")))?,
            &name,
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.push(NamedTensor { name, tensor });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Network<f32>, CheckpointMeta)> {
    let mut tensors = decode_tensors(bytes)?;
    let mut take = |name: &str| -> Result<Tensor<f32>> {
        let i = tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        Ok(tensors.swap_remove(i).tensor)
    };
    let scalar = |t: Tensor<f32>, name: &str| -> Result<f32> {
        match t.data() {
            [v] => Ok(*v),
            _ => Err(Error::Checkpoint(format!("{name} must be a scalar"))),
        }
    };
    let momentum = scalar(take(META_BN_MOMENTUM)?, META_BN_MOMENTUM)?;
    let eps = scalar(take(META_BN_EPS)?, META_BN_EPS)?;
    let meta = CheckpointMeta {
        epochs_run: scalar(take(META_EPOCHS)?, META_EPOCHS)? as u32,
        best_val_loss: scalar(take(META_VAL_LOSS)?, META_VAL_LOSS)?,
    };
    // shortest decimal form recovers e.g. 0.9 exactly rather than 0.899999976
    let widen = |v: f32| {
        v.to_string()
            .parse::<f64>()
            .expect("float formatting round-trips")
    };
    let mut net = Network::<f32>::init_with(0, widen(momentum), widen(eps));
    for (name, slot) in PARAM_NAMES.iter().zip(net.params_mut()) {
        let t = take(name)?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: expected shape {:?}, found {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
    }
    for (name, slot) in RUNNING_STAT_NAMES.iter().zip(net.running_stats_mut()) {
        let t = take(name)?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: expected shape {:?}, found {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = tensors.first() {
        return Err(Error::Checkpoint(format!(
            "unexpected tensor {}",
            extra.name
        )));
    }
    Ok((net, meta))
}

pub fn save_checkpoint(net: &Network<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::network::PARAMETER_COUNT;

    #[test]
    fn round_trip_preserves_every_tensor() {
        let mut net = Network::<f32>::init(5);
        net.bn2.running_mean.data_mut()[3] = 0.125;
        let meta = CheckpointMeta {
            epochs_run: 7,
            best_val_loss: 0.031,
        };
        let (back, m) = decode_checkpoint(&encode_checkpoint(&net, &meta)).unwrap();
        assert_eq!(back, net);
        assert_eq!(m, meta);
    }

    #[test]
    fn payload_counts() {
        let net = Network::<f32>::init(0);
        let tensors = decode_tensors(&encode_checkpoint(&net, &CheckpointMeta::default())).unwrap();
        let count = |pred: &dyn Fn(&str) -> bool| -> usize {
            tensors
                .iter()
                .filter(|t| pred(&t.name))
                .map(|t| t.tensor.len())
                .sum()
        };
        assert_eq!(count(&|n| PARAM_NAMES.contains(&n)), PARAMETER_COUNT);
        assert_eq!(
            count(&|n| RUNNING_STAT_NAMES.contains(&n)),
            2 * (32 + 32 + 96)
        );
    }

    #[test]
    fn truncated_and_corrupt_inputs_fail() {
        let net = Network::<f32>::init(0);
        let bytes = encode_checkpoint(&net, &CheckpointMeta::default());
        for cut in [0, 3, 8, 11, 100, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
