//! Line-delimited JSON manifests.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::PcmEncoding;
use crate::error::{Error, Result};

/// A named tensor inside a tensor container file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRef {
    pub file: PathBuf,
    pub tensor: String,
}

/// Sources for one segment. Each modality comes either as raw media or as
/// precomputed tokens.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentSource {
    /// Directory of extracted `.png`/`.ppm` frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    /// One second of mono PCM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_encoding: Option<PcmEncoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_tokens: Option<TensorRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_tokens: Option<TensorRef>,
}

impl SegmentSource {
    pub fn has_visual(&self) -> bool {
        self.frames.is_some() || self.visual_tokens.is_some()
    }

    pub fn has_audio(&self) -> bool {
        self.audio.is_some() || self.audio_tokens.is_some()
    }

    fn paths(&self) -> impl Iterator<Item = &Path> {
        [
            self.frames.as_deref(),
            self.audio.as_deref(),
            self.visual_tokens.as_ref().map(|r| r.file.as_path()),
            self.audio_tokens.as_ref().map(|r| r.file.as_path()),
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub labels: BTreeMap<String, f64>,
    pub segments: Vec<SegmentSource>,
    pub duration_s: f64,
}

impl SampleRecord {
    /// Checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if id.is_empty() {
            return Err(Error::Validation("record with empty id".into()));
        }
        for (k, &v) in &self.labels {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("record `{id}`: label {k} = {v} is outside [0, 1]")));
            }
        }
        if self.segments.is_empty() {
            return Err(Error::Validation(format!("record `{id}` has no segments")));
        }
        if let Some(i) = self.segments.iter().position(|s| !s.has_visual() && !s.has_audio()) {
            return Err(Error::Validation(format!("record `{id}`: segment {i} has no modality")));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Validation(format!("record `{id}`: duration must be positive")));
        }
        Ok(())
    }
}

/// Parsed manifest plus the directory relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Parse JSONL text: one record per non-blank line, ids unique.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::Validation(format!("line {}: {e}", lineno + 1)))?;
        rec.validate()?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Validation(format!("duplicate id `{}`", rec.id)));
        }
        records.push(rec);
    }
    Ok(records)
}

/// Load and validate a manifest, checking that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_manifest(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest { base_dir, records };
    for rec in &manifest.records {
        for p in rec.segments.iter().flat_map(SegmentSource::paths) {
            let full = manifest.resolve(p);
            if !full.exists() {
                return Err(Error::Resolution {
                    id: rec.id.clone(),
                    path: full,
                });
            }
        }
    }
    Ok(manifest)
}

pub fn manifest_to_string(records: &[SampleRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn save_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    std::fs::write(path, manifest_to_string(records)?).map_err(|e| Error::io(path, e))
}
