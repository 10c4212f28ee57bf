use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::wav::{read_mono, read_wav};
use crate::eval::Example;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSummary {
    pub room: [f64; 3],
    pub t60: f64,
    pub interferers: usize,
}

/// One line of a dataset manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture: PathBuf,
    pub target: PathBuf,
    pub snr_db: f64,
    pub doa_index: usize,
    pub doa_degrees: f64,
    pub scene: SceneSummary,
    pub split: Split,
}

impl ManifestRecord {
    /// `doa_degrees` must sit on the grid point `doa_index`.
    pub fn check(&self, resolution_deg: f64) -> Result<()> {
        let expected = self.doa_index as f64 * resolution_deg;
        if (expected - self.doa_degrees).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "{}: doa_index {} is {expected} degrees, record says {}",
                self.id, self.doa_index, self.doa_degrees
            )));
        }
        Ok(())
    }
}

pub fn write_manifest(w: &mut dyn Write, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}

pub fn save_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_manifest(&mut buf, records)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(text: &[u8]) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(text).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("manifest line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&bytes)
}

/// Reads the audio of `records`, resolving paths against `root`.
pub fn load_examples(root: &Path, records: &[ManifestRecord], sample_rate: u32) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let (mixture, fs) = read_wav(&root.join(&r.mixture))?;
            let (target, fs_t) = read_mono(&root.join(&r.target))?;
            if fs != sample_rate || fs_t != sample_rate {
                return Err(Error::Domain(format!(
                    "{}: sample rate {fs}/{fs_t} Hz, expected {sample_rate}",
                    r.id
                )));
            }
            if target.len() != mixture.ncols() {
                return Err(Error::Domain(format!("{}: target and mixture lengths differ", r.id)));
            }
            Ok(Example {
                id: r.id.clone(),
                mixture,
                target,
                doa_index: r.doa_index,
                snr_db: r.snr_db,
            })
        })
        .collect()
}

/// Directory against which a manifest's paths resolve.
pub fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
