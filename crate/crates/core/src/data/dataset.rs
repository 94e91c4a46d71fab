//! Turning manifest records into model inputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::manifest::{load_manifest, Manifest, SampleRecord, SegmentSource, TensorRef};
use super::synthetic::SyntheticSplit;
use super::tensor_io::{read_tensors, AnyTensor};
use crate::audio::{read_pcm, MfccImage, PcmEncoding};
use crate::encoders::{load_segment_frames, sample_and_preprocess_frames, Modality};
use crate::error::{Error, Result};
use crate::model::{InputKind, ModalityInput, ModelConfig, SampleInput, SegmentInput, Task};
use crate::tensor::Element;
use crate::train::Example;

/// Tensor container files keyed by resolved path.
#[derive(Clone, Debug, Default)]
pub struct TensorCache {
    files: HashMap<PathBuf, HashMap<String, AnyTensor>>,
}

impl TensorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_file(&mut self, path: PathBuf, entries: Vec<(String, AnyTensor)>) {
        self.files.insert(path, entries.into_iter().collect());
    }

    fn ensure_loaded(&mut self, path: &Path) -> Result<()> {
        if !self.files.contains_key(path) {
            let entries = read_tensors(path)?;
            self.insert_file(path.to_path_buf(), entries);
        }
        Ok(())
    }

    fn get(&self, id: &str, path: &Path, name: &str) -> Result<&AnyTensor> {
        self.files
            .get(path)
            .and_then(|f| f.get(name))
            .ok_or_else(|| Error::Resolution {
                id: id.to_string(),
                path: path.join(name),
            })
    }
}

/// Target vector for `record` under `task`.
pub fn target_for(record: &SampleRecord, task: &Task) -> Result<Vec<f64>> {
    let id = &record.id;
    match task {
        Task::Binary { label } => {
            let key = match label {
                Some(k) => k.as_str(),
                None if record.labels.len() == 1 => record.labels.keys().next().expect("one key").as_str(),
                None => {
                    return Err(Error::Validation(format!(
                        "record `{id}` has {} labels; set the binary label key",
                        record.labels.len()
                    )))
                }
            };
            let v = *record
                .labels
                .get(key)
                .ok_or_else(|| Error::Validation(format!("record `{id}` lacks label `{key}`")))?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Validation(format!("record `{id}`: binary label {key} = {v} is not 0 or 1")));
            }
            Ok(vec![v])
        }
        Task::Traits { names } => names
            .iter()
            .map(|n| {
                record
                    .labels
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("record `{id}` lacks trait `{n}`")))
            })
            .collect(),
    }
}

fn kind(cfg: &ModelConfig, m: Modality) -> InputKind {
    match m {
        Modality::Visual => cfg.visual_input,
        Modality::Audio => cfg.audio_input,
    }
}

fn load_audio<T: Element>(path: &Path, encoding: PcmEncoding, cfg: &ModelConfig) -> Result<ModalityInput<T>> {
    let pcm = read_pcm(path, encoding, cfg.mfcc.sample_rate)?;
    if pcm.sample_rate != cfg.mfcc.sample_rate {
        return Err(Error::Input(format!(
            "{}: sample rate {} differs from configured {}",
            path.display(),
            pcm.sample_rate,
            cfg.mfcc.sample_rate
        )));
    }
    let mut samples = pcm.samples;
    if samples.len() > cfg.mfcc.sample_rate {
        return Err(Error::Input(format!("{}: segment audio is longer than one second", path.display())));
    }
    samples.resize(cfg.mfcc.sample_rate, 0.0);
    let image = MfccImage::from_signal(&samples, &cfg.mfcc)?;
    Ok(ModalityInput::Mfcc(image.tensor().cast()))
}

fn segment_input<T: Element>(
    manifest: &Manifest,
    cache: &TensorCache,
    id: &str,
    src: &SegmentSource,
    cfg: &ModelConfig,
) -> Result<SegmentInput<T>> {
    let tokens = |r: &TensorRef| -> Result<ModalityInput<T>> {
        Ok(ModalityInput::Tokens(cache.get(id, &manifest.resolve(&r.file), &r.tensor)?.to()))
    };
    let missing = |m: Modality, k: InputKind| {
        Error::Input(format!(
            "record `{id}` has no {} {} input",
            m.name(),
            if k == InputKind::Raw { "raw" } else { "token" }
        ))
    };
    let mut seg = SegmentInput::default();
    if cfg.variant.uses(Modality::Visual) {
        let k = kind(cfg, Modality::Visual);
        seg.visual = Some(match (k, &src.visual_tokens, &src.frames) {
            (InputKind::Tokens, Some(r), _) => tokens(r)?,
            (InputKind::Raw, _, Some(dir)) => {
                let frames = load_segment_frames(&manifest.resolve(dir))?;
                ModalityInput::Frames(sample_and_preprocess_frames(&frames, cfg.frames_per_segment, &cfg.frames)?)
            }
            _ => return Err(missing(Modality::Visual, k)),
        });
    }
    if cfg.variant.uses(Modality::Audio) {
        let k = kind(cfg, Modality::Audio);
        seg.audio = Some(match (k, &src.audio_tokens, &src.audio) {
            (InputKind::Tokens, Some(r), _) => tokens(r)?,
            (InputKind::Raw, _, Some(p)) => {
                load_audio(&manifest.resolve(p), src.audio_encoding.unwrap_or(PcmEncoding::Wav), cfg)?
            }
            _ => return Err(missing(Modality::Audio, k)),
        });
    }
    Ok(seg)
}

/// Resolve every record of `manifest` into an [`Example`]. Token files are
/// read once; records are then decoded in parallel, keeping manifest order.
pub fn build_examples<T: Element>(manifest: &Manifest, cfg: &ModelConfig, cache: &mut TensorCache) -> Result<Vec<Example<T>>> {
    cfg.validate()?;
    for rec in &manifest.records {
        if rec.segments.len() != cfg.n_segments {
            return Err(Error::Validation(format!(
                "record `{}` has {} segments, the model expects {}",
                rec.id,
                rec.segments.len(),
                cfg.n_segments
            )));
        }
        for seg in &rec.segments {
            for r in [&seg.visual_tokens, &seg.audio_tokens].into_iter().flatten() {
                cache.ensure_loaded(&manifest.resolve(&r.file))?;
            }
        }
    }
    let cache = &*cache;
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let segments = rec
                .segments
                .iter()
                .map(|s| segment_input(manifest, cache, &rec.id, s, cfg))
                .collect::<Result<_>>()?;
            Ok(Example {
                id: rec.id.clone(),
                input: SampleInput { segments },
                target: target_for(rec, &cfg.task)?,
            })
        })
        .collect()
}

/// Load a manifest from disk and resolve it.
pub fn load_examples<T: Element>(path: &Path, cfg: &ModelConfig) -> Result<Vec<Example<T>>> {
    let manifest = load_manifest(path)?;
    build_examples(&manifest, cfg, &mut TensorCache::new())
}

impl SyntheticSplit {
    /// Resolve the split in memory, without touching the filesystem.
    pub fn examples<T: Element>(&self, cfg: &ModelConfig) -> Result<Vec<Example<T>>> {
        let manifest = Manifest {
            base_dir: PathBuf::new(),
            records: self.records.clone(),
        };
        let mut cache = TensorCache::new();
        cache.insert_file(self.tensor_file.clone(), self.tensors.clone());
        build_examples(&manifest, cfg, &mut cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record(labels: &[(&str, f64)]) -> SampleRecord {
        SampleRecord {
            id: "r".into(),
            labels: labels.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            segments: vec![],
            duration_s: 1.0,
        }
    }

    #[test]
    fn binary_label_resolution() {
        let any = Task::Binary { label: None };
        assert_eq!(target_for(&record(&[("valence", 1.0)]), &any).unwrap(), vec![1.0]);
        assert!(target_for(&record(&[("a", 1.0), ("b", 0.0)]), &any).is_err());
        let named = Task::Binary {
            label: Some("b".into()),
        };
        assert_eq!(target_for(&record(&[("a", 1.0), ("b", 0.0)]), &named).unwrap(), vec![0.0]);
        assert!(target_for(&record(&[("valence", 0.4)]), &any).is_err());
    }

    #[test]
    fn traits_in_declared_order() {
        let rec = record(&[
            ("openness", 0.5),
            ("agreeableness", 0.1),
            ("conscientiousness", 0.2),
            ("extraversion", 0.3),
            ("neuroticism", 0.4),
        ]);
        assert_eq!(target_for(&rec, &Task::big_five()).unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
    }
}
