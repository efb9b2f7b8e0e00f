//! Checkpoint files: a JSON meta header plus raw little-endian f32
//! tensor data. One file carries the parameters and the training config
//! that produced them.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::models::zoo::{build_network, ArchId};
use crate::nn::Network;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"BPFCCKP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchId,
    /// Serialized TrainConfig (JSON) that produced the parameters.
    pub train_config: serde_json::Value,
    /// Epoch the parameters come from.
    pub epoch: usize,
    pub tensors: Vec<TensorMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

fn ck_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.display().to_string(), reason: reason.into() }
}

pub fn save_checkpoint<F: Float>(
    path: &Path,
    net: &Network<F>,
    train_config: serde_json::Value,
    epoch: usize,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tensors = net.tensors();
    let meta = CheckpointMeta {
        arch: ArchId::parse(&net.arch_name)?,
        train_config,
        epoch,
        tensors: tensors
            .iter()
            .map(|(name, _, shape)| TensorMeta { name: name.clone(), shape: shape.clone() })
            .collect(),
    };
    let meta_bytes = serde_json::to_vec(&meta).map_err(|e| ck_err(path, e.to_string()))?;

    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(meta_bytes.len() as u64)?;
        w.write_all(&meta_bytes)?;
        for (_, data, _) in &tensors {
            for &v in data {
                w.write_f32::<LittleEndian>(v.to_f64() as f32)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<F: Float>(path: &Path) -> Result<(Network<F>, CheckpointMeta)> {
    let mut r = BufReader::new(
        std::fs::File::open(path).map_err(|e| ck_err(path, e.to_string()))?,
    );
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| ck_err(path, e.to_string()))?;
    if &magic != MAGIC {
        return Err(ck_err(path, "bad magic; not a checkpoint file"));
    }
    let meta_len = r.read_u64::<LittleEndian>().map_err(|e| ck_err(path, e.to_string()))?;
    let mut meta_bytes = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta_bytes).map_err(|e| ck_err(path, e.to_string()))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| ck_err(path, e.to_string()))?;

    // The seed only matters for initialization, which is overwritten below.
    let mut net = build_network::<F>(meta.arch, 0);
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    for tm in &meta.tensors {
        let len: usize = tm.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| ck_err(path, "truncated tensor data"))?;
            data.push(F::of(v as f64));
        }
        tensors.push((tm.name.clone(), data, tm.shape.clone()));
    }
    net.load_tensors(&tensors)?;
    Ok((net, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn checkpoint_round_trip_preserves_logits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = crate::models::build_m_lenet::<f32>(11);
        save_checkpoint(&path, &net, serde_json::json!({"mode": "test"}), 3).unwrap();
        let (net2, meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(meta.epoch, 3);
        assert_eq!(meta.arch, ArchId::MLeNet);
        let x = Array4::from_elem((2, 1, 28, 28), 0.4f32);
        assert_eq!(net.logits(&x.view()), net2.logits(&x.view()));
    }

    #[test]
    fn wrong_arch_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = crate::models::build_m_lenet::<f32>(11);
        save_checkpoint(&path, &net, serde_json::json!({}), 0).unwrap();
        let (mut loaded, _) = load_checkpoint::<f32>(&path).unwrap();
        // Force tensors from a different architecture through load_tensors.
        let other = crate::models::build_net_a::<f32>(1);
        assert!(loaded.load_tensors(&other.tensors()).is_err());
    }
}
