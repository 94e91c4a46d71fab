//! Segment encoders: turn one second of frames or audio into a token
//! sequence of width `d_model`.
//!
//! Both modalities use the same scheme: cut the input into non-overlapping
//! patches, flatten each patch, project it linearly and add a learned
//! positional embedding. Precomputed token tensors skip this step entirely.

mod frames;

use serde::{Deserialize, Serialize};

pub use frames::{
    decode_png, decode_ppm, encode_ppm, frame_files, load_frame, load_segment_frames, normalize_pixel,
    preprocess_frame, resize_short_side, sample_and_preprocess_frames, sample_indices, FramePreprocessSpec,
    RgbFrame,
};

use crate::error::{dim_err, Error, Result};
use crate::layers::{Init, Linear};
use crate::tensor::{Element, ParamId, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }
}

/// Token sequence for one modality of one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentTokens<T: Element = f32> {
    pub tokens: Tensor<T>,
    pub modality: Modality,
    pub segment_index: usize,
}

impl<T: Element> SegmentTokens<T> {
    pub fn new(tokens: Tensor<T>, modality: Modality, segment_index: usize) -> Result<Self> {
        tokens.dims2()?;
        Ok(SegmentTokens {
            tokens,
            modality,
            segment_index,
        })
    }

    pub fn count(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Cut `m × 3 × s × s` frames into `p × p` patches, frame-major then
/// row-major over the patch grid. Each patch is flattened channel-major.
pub fn visual_patches<T: Element>(frames: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let &[m, 3, s, s2] = frames.shape() else {
        return Err(dim_err!("expected m×3×s×s frames, got {:?}", frames.shape()));
    };
    if s != s2 {
        return Err(dim_err!("frames must be square, got {s}×{s2}"));
    }
    if patch == 0 || s % patch != 0 {
        return Err(Error::Config(format!("crop {s} is not divisible by patch {patch}")));
    }
    let grid = s / patch;
    let dim = 3 * patch * patch;
    let src = frames.data();
    let mut out = Vec::with_capacity(m * grid * grid * dim);
    for f in 0..m {
        for gy in 0..grid {
            for gx in 0..grid {
                for c in 0..3 {
                    for y in 0..patch {
                        let row = ((f * 3 + c) * s + gy * patch + y) * s + gx * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![m * grid * grid, dim], out)
}

/// Cut a `3 × frames × coeffs` MFCC image into full-width bands of
/// `patch_frames` time steps, zero-padding the time axis.
pub fn audio_patches<T: Element>(image: &Tensor<T>, patch_frames: usize) -> Result<Tensor<T>> {
    let &[3, frames, coeffs] = image.shape() else {
        return Err(dim_err!("expected 3×frames×coeffs image, got {:?}", image.shape()));
    };
    if patch_frames == 0 {
        return Err(Error::Config("audio patch extent must be positive".into()));
    }
    let tokens = frames.div_ceil(patch_frames);
    let dim = 3 * patch_frames * coeffs;
    let src = image.data();
    let mut out = vec![T::zero(); tokens * dim];
    for tok in 0..tokens {
        for c in 0..3 {
            for t in 0..patch_frames {
                let frame = tok * patch_frames + t;
                if frame >= frames {
                    continue;
                }
                let from = (c * frames + frame) * coeffs;
                let to = tok * dim + (c * patch_frames + t) * coeffs;
                out[to..to + coeffs].copy_from_slice(&src[from..from + coeffs]);
            }
        }
    }
    Tensor::new(vec![tokens, dim], out)
}

/// Linear patch projection plus learned positional table.
#[derive(Clone, Debug)]
pub struct PatchEncoder {
    pub modality: Modality,
    pub proj: Linear,
    pub positions: ParamId,
    pub tokens: usize,
    pub patch: usize,
}

impl PatchEncoder {
    pub fn new<T: Element>(
        init: &mut Init<'_, T>,
        modality: Modality,
        patch: usize,
        patch_dim: usize,
        tokens: usize,
        d_model: usize,
    ) -> Result<Self> {
        let name = format!("{}.encoder", modality.name());
        let proj = Linear::new(init, &format!("{name}.proj"), patch_dim, d_model, true)?;
        let positions = init.uniform(&format!("{name}.positions"), &[tokens, d_model], 0.02)?;
        Ok(PatchEncoder {
            modality,
            proj,
            positions,
            tokens,
            patch,
        })
    }

    fn project<T: Element>(&self, tape: &mut Tape<'_, T>, patches: Tensor<T>) -> Result<Var> {
        if patches.shape()[0] != self.tokens {
            return Err(dim_err!(
                "{} encoder expects {} patches, got {}",
                self.modality.name(),
                self.tokens,
                patches.shape()[0]
            ));
        }
        let x = tape.constant(patches);
        let y = self.proj.forward(tape, x)?;
        let pos = tape.param(self.positions);
        tape.add(y, pos)
    }
}

/// `m × 3 × s × s` frames → `m·(s/p)² × d_model` tokens.
pub fn encode_visual<T: Element>(tape: &mut Tape<'_, T>, frames: &Tensor<T>, enc: &PatchEncoder) -> Result<Var> {
    let patches = visual_patches(frames, enc.patch)?;
    enc.project(tape, patches)
}

/// `3 × frames × coeffs` MFCC image → `ceil(frames / p) × d_model` tokens.
pub fn encode_audio<T: Element>(tape: &mut Tape<'_, T>, image: &Tensor<T>, enc: &PatchEncoder) -> Result<Var> {
    let patches = audio_patches(image, enc.patch)?;
    enc.project(tape, patches)
}
