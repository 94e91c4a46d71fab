//! Planted-signal datasets.
//!
//! `xor`: each sample draws bits `a` (audio) and `v` (visual); every audio
//! token is `±μ_a + noise` and every visual token `±μ_v + noise`; the label
//! is `a XOR v`, so either modality alone carries no information about it.
//!
//! `recency`: only the final three segments carry signal. Segment `n−3+k`
//! encodes bit `b_k` in both modalities; the label is the parity of the three
//! bits. Earlier segments are pure noise.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{save_manifest, SampleRecord, SegmentSource, TensorRef};
use super::tensor_io::{write_tensors, AnyTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Segments carrying the recency signal.
pub const RECENT_SEGMENTS: usize = 3;
pub const LABEL_KEY: &str = "label";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticMode {
    Xor,
    Recency,
}

impl fmt::Display for SyntheticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticMode::Xor => "xor",
            SyntheticMode::Recency => "recency",
        })
    }
}

impl FromStr for SyntheticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xor" => Ok(SyntheticMode::Xor),
            "recency" => Ok(SyntheticMode::Recency),
            _ => Err(Error::Config(format!("unknown synthetic mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub mode: SyntheticMode,
    pub n_segments: usize,
    pub tokens_per_modality: usize,
    /// Token width; must equal the model's `d_model`.
    pub dim: usize,
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            mode: SyntheticMode::Xor,
            n_segments: 10,
            tokens_per_modality: 2,
            dim: 32,
            noise: 1.0,
            train_size: 2000,
            test_size: 500,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 || self.tokens_per_modality == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic sizes must be at least 1".into()));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("train and test sizes must be at least 1".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise {} must be non-negative", self.noise)));
        }
        if self.mode == SyntheticMode::Recency && self.n_segments < RECENT_SEGMENTS {
            return Err(Error::Config(format!("recency mode needs at least {RECENT_SEGMENTS} segments")));
        }
        Ok(())
    }
}

/// One generated split: records plus the tensors they reference.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplit {
    pub records: Vec<SampleRecord>,
    pub tensor_file: PathBuf,
    pub tensors: Vec<(String, AnyTensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: SyntheticSplit,
    pub test: SyntheticSplit,
    /// Per-modality prototypes `μ_v`, `μ_a` the signal is planted along.
    pub mu_visual: Vec<f64>,
    pub mu_audio: Vec<f64>,
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    mu_visual: Vec<f64>,
    mu_audio: Vec<f64>,
}

impl Generator<'_> {
    fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// `tokens × dim` tokens around `sign · μ` (or zero when `sign` is None).
    fn tokens(&mut self, mu: Option<(&[f64], f64)>) -> Tensor<f32> {
        let (t, d) = (self.spec.tokens_per_modality, self.spec.dim);
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            for j in 0..d {
                let centre = mu.map_or(0.0, |(m, s)| s * m[j]);
                data.push((centre + self.spec.noise * self.gaussian()) as f32);
            }
        }
        Tensor::new(vec![t, d], data).expect("shape matches data")
    }

    fn sign(bit: bool) -> f64 {
        if bit {
            1.0
        } else {
            -1.0
        }
    }

    fn split(&mut self, name: &str, size: usize) -> SyntheticSplit {
        let n = self.spec.n_segments;
        let tensor_file = PathBuf::from(format!("{name}.s2s"));
        let mut records = Vec::with_capacity(size);
        let mut tensors = Vec::with_capacity(size * n * 2);
        let (mu_v, mu_a) = (self.mu_visual.clone(), self.mu_audio.clone());
        for i in 0..size {
            let id = format!("{name}-{i:05}");
            let (bits, label) = match self.spec.mode {
                SyntheticMode::Xor => {
                    let a: bool = self.rng.random();
                    let v: bool = self.rng.random();
                    (vec![(Some(v), Some(a)); n], a ^ v)
                }
                SyntheticMode::Recency => {
                    let b: [bool; RECENT_SEGMENTS] = self.rng.random();
                    let mut per_seg = vec![(None, None); n - RECENT_SEGMENTS];
                    per_seg.extend(b.iter().map(|&x| (Some(x), Some(x))));
                    (per_seg, b.iter().fold(false, |p, &x| p ^ x))
                }
            };
            let mut segments = Vec::with_capacity(n);
            for (s, (vb, ab)) in bits.into_iter().enumerate() {
                let vt = self.tokens(vb.map(|b| (mu_v.as_slice(), Self::sign(b))));
                let at = self.tokens(ab.map(|b| (mu_a.as_slice(), Self::sign(b))));
                let (vname, aname) = (format!("{id}/{s}/visual"), format!("{id}/{s}/audio"));
                tensors.push((vname.clone(), AnyTensor::F32(vt)));
                tensors.push((aname.clone(), AnyTensor::F32(at)));
                segments.push(SegmentSource {
                    visual_tokens: Some(TensorRef {
                        file: tensor_file.clone(),
                        tensor: vname,
                    }),
                    audio_tokens: Some(TensorRef {
                        file: tensor_file.clone(),
                        tensor: aname,
                    }),
                    ..Default::default()
                });
            }
            records.push(SampleRecord {
                id,
                labels: BTreeMap::from([(LABEL_KEY.to_string(), if label { 1.0 } else { 0.0 })]),
                segments,
                duration_s: n as f64,
            });
        }
        SyntheticSplit {
            records,
            tensor_file,
            tensors,
        }
    }
}

/// Generate both splits. Single-threaded so output is a pure function of
/// the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let proto = |rng: &mut ChaCha8Rng| (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>();
    let mu_visual = proto(&mut rng);
    let mu_audio = proto(&mut rng);
    let mut g = Generator {
        spec,
        rng,
        mu_visual,
        mu_audio,
    };
    let train = g.split("train", spec.train_size);
    let test = g.split("test", spec.test_size);
    Ok(SyntheticData {
        train,
        test,
        mu_visual: g.mu_visual,
        mu_audio: g.mu_audio,
    })
}

/// Write `train.jsonl`, `test.jsonl` and their tensor files into `dir`.
/// Returns the two manifest paths.
pub fn write_synthetic(data: &SyntheticData, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (name, split) in [("train", &data.train), ("test", &data.test)] {
        write_tensors(&dir.join(&split.tensor_file), &split.tensors)?;
        let manifest = dir.join(format!("{name}.jsonl"));
        save_manifest(&manifest, &split.records)?;
        paths.push(manifest);
    }
    let test = paths.pop().expect("two manifests");
    let train = paths.pop().expect("two manifests");
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mode: SyntheticMode) -> SyntheticSpec {
        SyntheticSpec {
            mode,
            n_segments: 5,
            dim: 4,
            train_size: 20,
            test_size: 5,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&spec(SyntheticMode::Xor)).unwrap();
        let b = generate_synthetic(&spec(SyntheticMode::Xor)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 4, ..spec(SyntheticMode::Xor) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_references() {
        let d = generate_synthetic(&spec(SyntheticMode::Recency)).unwrap();
        assert_eq!(d.train.records.len(), 20);
        assert_eq!(d.test.records.len(), 5);
        assert_eq!(d.train.tensors.len(), 20 * 5 * 2);
        assert!(d.train.tensors.iter().all(|(_, t)| t.shape() == [2, 4]));
        let r = &d.train.records[0];
        assert_eq!(r.segments.len(), 5);
        assert_eq!(r.segments[4].audio_tokens.as_ref().unwrap().tensor, "train-00000/4/audio");
    }

    #[test]
    fn noiseless_recency_encodes_parity() {
        let s = SyntheticSpec {
            noise: 0.0,
            ..spec(SyntheticMode::Recency)
        };
        let d = generate_synthetic(&s).unwrap();
        let lookup: BTreeMap<_, _> = d.train.tensors.iter().cloned().collect();
        for r in &d.train.records {
            let mut parity = false;
            for seg in 0..5 {
                let v = lookup[&format!("{}/{seg}/visual", r.id)].to::<f64>();
                let a = lookup[&format!("{}/{seg}/audio", r.id)].to::<f64>();
                if seg < 2 {
                    assert!(v.data().iter().chain(a.data()).all(|&x| x == 0.0));
                    continue;
                }
                let dot = |t: &Tensor<f64>, mu: &[f64]| t.row(0).iter().zip(mu).map(|(x, m)| x * m).sum::<f64>();
                let bit_v = dot(&v, &d.mu_visual) > 0.0;
                assert_eq!(bit_v, dot(&a, &d.mu_audio) > 0.0);
                parity ^= bit_v;
            }
            assert_eq!(r.labels[LABEL_KEY], if parity { 1.0 } else { 0.0 });
        }
    }
}
