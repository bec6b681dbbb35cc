//! Parameter checkpoints: `PKCK` magic, version, a JSON manifest, then
//! little-endian `f64` values block by block in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Block, ToyConfig, ToyNetwork};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PKCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub block: Block,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ToyConfig,
    pub heads: BTreeMap<String, String>,
    pub blocks: Vec<BlockEntry>,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::MalformedCheckpoint(format!("truncated {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4, what)?.try_into().expect("4 bytes")))
}

impl ToyNetwork {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config,
            heads: self.heads.clone(),
            blocks: self
                .params
                .iter()
                .map(|(b, v)| BlockEntry { block: b.clone(), len: v.len() })
                .collect(),
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + manifest.len() + 8 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for v in self.params.values().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(mut bytes: &[u8]) -> Result<Self> {
        let b = &mut bytes;
        if take(b, 4, "magic")? != MAGIC {
            return Err(Error::MalformedCheckpoint("bad magic".into()));
        }
        let version = read_u32(b, "version")?;
        if version != VERSION {
            return Err(Error::MalformedCheckpoint(format!("unsupported version {version}")));
        }
        let len = read_u32(b, "manifest length")? as usize;
        let manifest: Manifest = serde_json::from_slice(take(b, len, "manifest")?)
            .map_err(|e| Error::MalformedCheckpoint(format!("manifest: {e}")))?;
        let mut net = ToyNetwork::zeros(manifest.config, manifest.heads)?;
        if manifest.blocks.len() != net.params.len() {
            return Err(Error::MalformedCheckpoint("manifest block list does not match the heads".into()));
        }
        for entry in &manifest.blocks {
            let values = net
                .params
                .get_mut(&entry.block)
                .ok_or_else(|| Error::MalformedCheckpoint(format!("unexpected block `{}`", entry.block)))?;
            if values.len() != entry.len {
                return Err(Error::MalformedCheckpoint(format!(
                    "block `{}` has {} values, config implies {}",
                    entry.block,
                    entry.len,
                    values.len()
                )));
            }
            let raw = take(b, 8 * entry.len, &format!("block `{}`", entry.block))?;
            for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        if !b.is_empty() {
            return Err(Error::MalformedCheckpoint(format!("{} trailing bytes", b.len())));
        }
        Ok(net)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::from(e).in_file(path.display().to_string()))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path.display().to_string()))?;
        ToyNetwork::from_checkpoint_bytes(&bytes).map_err(|e| e.in_file(path.display().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let heads = [("A".to_string(), "coco".to_string())].into_iter().collect();
        let net = ToyNetwork::new(ToyConfig::default(), heads, 4).unwrap();
        let bytes = net.to_checkpoint_bytes();
        assert_eq!(ToyNetwork::from_checkpoint_bytes(&bytes).unwrap(), net);
        assert!(matches!(
            ToyNetwork::from_checkpoint_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::MalformedCheckpoint(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ToyNetwork::from_checkpoint_bytes(&extra).is_err());
        assert!(ToyNetwork::from_checkpoint_bytes(b"PKHM").is_err());
    }
}
