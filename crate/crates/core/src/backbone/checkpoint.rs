//! Checkpoint archive: `b"CST1"`, a little-endian `u64` header length, the
//! JSON header, then every scalar as little-endian `f64` in registry order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamSet, TensorSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CST1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture_hash: String,
    pub stage: String,
    pub epoch: usize,
    pub seed: u64,
    pub tensors: Vec<TensorSpec>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamSet, stage: &str, epoch: usize, seed: u64) -> Result<()> {
    let header = CheckpointHeader {
        architecture_hash: params.architecture_hash(),
        stage: stage.to_string(),
        epoch,
        seed,
        tensors: params.specs().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for v in &params.values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads values into `params`, refusing archives of another architecture.
pub fn load_checkpoint(path: impl AsRef<Path>, params: &mut ParamSet) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
    let mut cur = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Schema(format!("{} is not a checkpoint", path.display())));
    }
    let mut len = [0u8; 8];
    cur.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    cur.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.architecture_hash != params.architecture_hash() {
        return Err(Error::Schema(format!(
            "checkpoint architecture {} does not match model {}",
            header.architecture_hash,
            params.architecture_hash()
        )));
    }
    let mut buf = [0u8; 8];
    for v in params.values.iter_mut() {
        cur.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Block;

    #[test]
    fn round_trip_and_hash_check() {
        let mut p = ParamSet::new();
        p.push("a", &[2, 2], Block::Spatial, vec![0.1, -2.5, 3.0, f64::MIN_POSITIVE]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &p, "warmup", 3, 9).unwrap();

        let mut q = p.clone();
        q.values.iter_mut().for_each(|v| *v = 0.0);
        let h = load_checkpoint(&path, &mut q).unwrap();
        assert_eq!(q, p);
        assert_eq!((h.stage.as_str(), h.epoch, h.seed), ("warmup", 3, 9));

        let mut other = ParamSet::new();
        other.push("a", &[4], Block::Spatial, vec![0.0; 4]);
        assert!(matches!(load_checkpoint(&path, &mut other), Err(Error::Schema(_))));
    }
}
