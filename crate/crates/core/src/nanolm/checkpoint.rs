use super::config::ModelConfig;
use super::params::Params;
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// A persisted model: config, tokenizer identity, training step, weights.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    step: u64,
    arrays: Vec<ArrayInfo>,
}

#[derive(Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    len: usize,
}

/// Layout: u64 little-endian header length, JSON header, then the named
/// f64 little-endian arrays in sorted name order. Bit-exact round trip.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = ckpt.params.entries();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let header = Header {
        config: ckpt.config.clone(),
        vocab_hash: ckpt.vocab_hash.clone(),
        step: ckpt.step,
        arrays: entries
            .iter()
            .map(|(name, t)| ArrayInfo { name: name.clone(), len: t.len() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for (_, tensor) in entries {
        for &x in tensor {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 8];
    reader
        .read_exact(&mut len_bytes)
        .map_err(|_| CoreError::Checkpoint("file too short for header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 24 {
        return Err(CoreError::Checkpoint(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    reader
        .read_exact(&mut header_bytes)
        .map_err(|_| CoreError::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CoreError::Checkpoint(format!("bad header: {e}")))?;
    header.config.validate()?;

    let mut params = Params::zeros(&header.config);
    {
        let mut expected: Vec<(String, &mut Vec<f64>)> = params.entries_mut();
        expected.sort_by(|a, b| a.0.cmp(&b.0));
        if expected.len() != header.arrays.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} arrays, header lists {}",
                expected.len(),
                header.arrays.len()
            )));
        }
        for (slot, info) in expected.into_iter().zip(header.arrays.iter()) {
            if slot.0 != info.name || slot.1.len() != info.len {
                return Err(CoreError::Checkpoint(format!(
                    "array mismatch: {} (len {}) vs header {} (len {})",
                    slot.0,
                    slot.1.len(),
                    info.name,
                    info.len
                )));
            }
            let mut buf = vec![0u8; info.len * 8];
            reader.read_exact(&mut buf).map_err(|_| {
                CoreError::Checkpoint(format!("truncated data for array {}", info.name))
            })?;
            for (j, chunk) in buf.chunks_exact(8).enumerate() {
                slot.1[j] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CoreError::Checkpoint(format!(
            "{} trailing bytes after arrays",
            rest.len()
        )));
    }
    Ok(Checkpoint {
        config: header.config,
        vocab_hash: header.vocab_hash,
        step: header.step,
        params,
    })
}
