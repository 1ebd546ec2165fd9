//! Training-set serialization: samples as JSON Lines plus a manifest tying
//! them to the configuration and seed that produced them.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AugConfig;
use crate::data::filter::FilterReport;
use crate::data::labels::TrainingSample;
use crate::{Error, Result};

const SAMPLES_FILE: &str = "samples.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record stored next to the samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    /// Hash of the config sections the samples depend on.
    pub training_hash: String,
    /// Lookahead steps per channel.
    pub k: usize,
    /// Lookahead spacing [m].
    pub spacing_m: f64,
    /// Scan beams per sample.
    pub beams: usize,
    pub aug: AugConfig,
    pub filter: FilterReport,
    /// Number of serialized samples.
    pub samples: usize,
}

/// Writes `samples` and the manifest into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, samples: &[TrainingSample], manifest: &DatasetManifest) -> Result<()> {
    if manifest.samples != samples.len() {
        return Err(Error::InvalidInput(format!(
            "manifest claims {} samples, writing {}",
            manifest.samples,
            samples.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    fs::write(dir.join(SAMPLES_FILE), buf)?;
    let mut mbuf = serde_json::to_vec_pretty(manifest)?;
    mbuf.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), mbuf)?;
    Ok(())
}

/// Loads a dataset directory. When `expected_hash` is given, a manifest
/// recorded under a different configuration hash is rejected.
pub fn load_dataset(
    dir: &Path,
    expected_hash: Option<&str>,
) -> Result<(Vec<TrainingSample>, DatasetManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|_| Error::MissingInput(format!("{}", manifest_path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if let Some(want) = expected_hash {
        if manifest.training_hash != want {
            return Err(Error::ConfigMismatch {
                stored: manifest.training_hash.clone(),
                current: want.to_string(),
            });
        }
    }
    let samples_path = dir.join(SAMPLES_FILE);
    let file = fs::File::open(&samples_path)
        .map_err(|_| Error::MissingInput(format!("{}", samples_path.display())))?;
    let mut samples = Vec::with_capacity(manifest.samples);
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let s: TrainingSample = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{SAMPLES_FILE}:{}: {e}", ln + 1)))?;
        samples.push(s);
    }
    if samples.len() != manifest.samples {
        return Err(Error::InvalidInput(format!(
            "manifest claims {} samples, file holds {}",
            manifest.samples,
            samples.len()
        )));
    }
    Ok((samples, manifest))
}
