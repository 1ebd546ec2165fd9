//! Checkpoint format: a small JSON header (config, progress, tensor table)
//! followed by raw little-endian f64 blobs for every tensor's values and ADAM
//! moments. Writing is byte-deterministic: the same state produces the same
//! file.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::planner::Planner;
use crate::config::RunConfig;
use crate::{Adam, Error, ParamStore, Result};

const MAGIC: &[u8; 4] = b"MNHC";
const VERSION: u32 = 1;

/// Everything needed to resume or audit a training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    /// Full configuration the model was built under.
    pub config: RunConfig,
    /// Hash over the training-relevant configuration sections; evaluation
    /// refuses checkpoints whose hash differs from the active config.
    pub training_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub adam_step: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorInfo>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

/// Writes the store and metadata to `path` atomically (temp file + rename).
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let entries = store.export();
    let header = Header {
        meta: meta.clone(),
        tensors: entries
            .iter()
            .map(|(name, rows, cols, ..)| TensorInfo {
                name: name.clone(),
                rows: *rows,
                cols: *cols,
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header_json.len() as u64).to_le_bytes())?;
        w.write_all(&header_json)?;
        for (_, _, _, values, m, v) in &entries {
            for blob in [values, m, v] {
                for x in blob {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint, rebuilding the planner from the stored configuration.
pub fn load_checkpoint(path: &Path) -> Result<(Planner, ParamStore, Adam, CheckpointMeta)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::MissingInput(format!("checkpoint {}: {e}", path.display())))?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput(format!(
            "not a checkpoint file: {}",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "header length")?;
    let header_len = u64::from_le_bytes(len) as usize;
    if header_len > r.len() {
        return Err(Error::InvalidInput("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&r[..header_len])?;
    r = &r[header_len..];

    // The stored tensor table sizes the blob section exactly.
    let mut entries = Vec::with_capacity(header.tensors.len());
    for info in &header.tensors {
        let n = info.rows * info.cols;
        let mut blobs = [Vec::new(), Vec::new(), Vec::new()];
        for blob in &mut blobs {
            if r.len() < n * 8 {
                return Err(Error::InvalidInput(format!(
                    "truncated checkpoint tensor `{}`",
                    info.name
                )));
            }
            blob.reserve(n);
            for chunk in r[..n * 8].chunks_exact(8) {
                blob.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            r = &r[n * 8..];
        }
        let [values, m, v] = blobs;
        entries.push((info.name.clone(), info.rows, info.cols, values, m, v));
    }
    if !r.is_empty() {
        return Err(Error::InvalidInput(format!(
            "checkpoint has {} trailing bytes",
            r.len()
        )));
    }

    let mut store = ParamStore::new();
    // Seed is irrelevant: import overwrites every value below.
    let planner = Planner::new(&header.meta.config, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    store.import(&entries)?;
    let mut adam = Adam::new();
    adam.step = header.meta.adam_step;
    Ok((planner, store, adam, header.meta))
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::InvalidInput(format!("truncated checkpoint ({what})")))
}
