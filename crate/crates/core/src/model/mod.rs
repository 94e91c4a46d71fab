//! The full second-to-second model: encoders, co-attention fusion per
//! segment, LSTM aggregation over segments and the sigmoid predictor.

mod checkpoint;
mod lstm;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{index_path, load_checkpoint, save_checkpoint, CheckpointIndex, ParamEntry};
pub use lstm::{attention_pool, lstm_step, predict, run_lstm, AttnPoolParams, LstmParams, LstmState};

use crate::audio::MfccConfig;
use crate::coattention::{co_attention_block, fuse_modalities, self_attention_subblock, CoAttentionParams, SubBlockParams};
use crate::encoders::{encode_audio, encode_visual, FramePreprocessSpec, Modality, PatchEncoder};
use crate::error::{dim_err, Error, Result};
use crate::layers::{Init, Linear};
use crate::tensor::{Element, Grads, ParamStore, Tape, Tensor, Var};

/// Trait order used for the five-trait personality task.
pub const BIG_FIVE: [&str; 5] = ["agreeableness", "conscientiousness", "extraversion", "neuroticism", "openness"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Self-attention then cross-attention per modality.
    SaCa,
    /// Two self-attention stages per modality.
    SaSa,
    AudioOnly,
    VisionOnly,
    /// SA-CA fusion, mean over segments instead of the LSTM.
    CoAttnNoLstm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SaCa,
        Variant::SaSa,
        Variant::AudioOnly,
        Variant::VisionOnly,
        Variant::CoAttnNoLstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SaCa => "SA-CA",
            Variant::SaSa => "SA-SA",
            Variant::AudioOnly => "AudioOnly",
            Variant::VisionOnly => "VisionOnly",
            Variant::CoAttnNoLstm => "CoAttnNoLSTM",
        }
    }

    pub fn uses(self, modality: Modality) -> bool {
        !matches!(
            (self, modality),
            (Variant::AudioOnly, Modality::Visual) | (Variant::VisionOnly, Modality::Audio)
        )
    }

    pub fn has_lstm(self) -> bool {
        self != Variant::CoAttnNoLstm
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "saca" => Variant::SaCa,
            "sasa" => Variant::SaSa,
            "audioonly" | "audio" => Variant::AudioOnly,
            "visiononly" | "vision" => Variant::VisionOnly,
            "coattnnolstm" => Variant::CoAttnNoLstm,
            _ => return Err(Error::Config(format!("unknown variant `{s}`"))),
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.as_str().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    /// One binary label; `label` names the manifest key (or the single key
    /// present when unset).
    Binary { label: Option<String> },
    /// Continuous targets in [0, 1], one per named trait.
    Traits { names: Vec<String> },
}

impl Task {
    pub fn big_five() -> Self {
        Task::Traits {
            names: BIG_FIVE.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Task::Binary { .. } => 1,
            Task::Traits { names } => names.len(),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Task::Binary { .. })
    }
}

impl Default for Task {
    fn default() -> Self {
        Task::Binary { label: None }
    }
}

/// How a modality arrives at the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Precomputed `t × d_model` token tensors.
    Tokens,
    /// Raw frames or PCM, encoded by the trainable patch encoders.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_segments: usize,
    pub frames_per_segment: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    pub d_attn: usize,
    pub heads: usize,
    pub depth: usize,
    pub standard_block: bool,
    pub interpretable: bool,
    pub task: Task,
    pub visual_input: InputKind,
    pub audio_input: InputKind,
    pub visual_patch: usize,
    pub audio_patch_frames: usize,
    pub mfcc: MfccConfig,
    pub frames: FramePreprocessSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::SaCa,
            n_segments: 10,
            frames_per_segment: 4,
            d_model: 64,
            d_hidden: 64,
            d_attn: 64,
            heads: 4,
            depth: 1,
            standard_block: false,
            interpretable: false,
            task: Task::default(),
            visual_input: InputKind::Tokens,
            audio_input: InputKind::Tokens,
            visual_patch: 28,
            audio_patch_frames: 14,
            mfcc: MfccConfig::default(),
            frames: FramePreprocessSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_segments == 0 {
            return bad("n_segments must be at least 1".into());
        }
        if self.d_model == 0 || self.d_hidden == 0 || self.d_attn == 0 {
            return bad("model widths must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("{} heads do not divide d_model {}", self.heads, self.d_model));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.task.outputs() == 0 {
            return bad("task has no outputs".into());
        }
        if self.interpretable && !self.variant.has_lstm() {
            return bad(format!("variant {} has no LSTM states to attend over", self.variant));
        }
        if self.variant.uses(Modality::Visual) && self.visual_input == InputKind::Raw {
            self.frames.validate()?;
            if self.frames_per_segment == 0 {
                return bad("frames_per_segment must be at least 1".into());
            }
            if self.visual_patch == 0 || self.frames.center_crop % self.visual_patch != 0 {
                return bad(format!(
                    "crop {} is not divisible by visual_patch {}",
                    self.frames.center_crop, self.visual_patch
                ));
            }
        }
        if self.variant.uses(Modality::Audio) && self.audio_input == InputKind::Raw {
            self.mfcc.validate()?;
            if self.audio_patch_frames == 0 {
                return bad("audio_patch_frames must be positive".into());
            }
            if self.mfcc.frames_per_second() < 2 * self.mfcc.delta_window + 1 {
                return bad("one second of audio is too short for the delta window".into());
            }
        }
        Ok(())
    }

    pub fn visual_tokens(&self) -> usize {
        let grid = self.frames.center_crop / self.visual_patch.max(1);
        self.frames_per_segment * grid * grid
    }

    pub fn audio_tokens(&self) -> usize {
        self.mfcc.frames_per_second().div_ceil(self.audio_patch_frames.max(1))
    }
}

/// Input for one modality of one segment.
#[derive(Clone, Debug, PartialEq)]
pub enum ModalityInput<T: Element = f32> {
    /// `t × d_model` tokens, consumed verbatim.
    Tokens(Tensor<T>),
    /// `m × 3 × crop × crop` preprocessed frames.
    Frames(Tensor<T>),
    /// `3 × frames × coeffs` MFCC image.
    Mfcc(Tensor<T>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentInput<T: Element = f32> {
    pub visual: Option<ModalityInput<T>>,
    pub audio: Option<ModalityInput<T>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleInput<T: Element = f32> {
    pub segments: Vec<SegmentInput<T>>,
}

impl<T: Element> SampleInput<T> {
    pub fn cast<U: Element>(&self) -> SampleInput<U> {
        let c = |m: &ModalityInput<T>| match m {
            ModalityInput::Tokens(t) => ModalityInput::Tokens(t.cast()),
            ModalityInput::Frames(t) => ModalityInput::Frames(t.cast()),
            ModalityInput::Mfcc(t) => ModalityInput::Mfcc(t.cast()),
        };
        SampleInput {
            segments: self
                .segments
                .iter()
                .map(|s| SegmentInput {
                    visual: s.visual.as_ref().map(c),
                    audio: s.audio.as_ref().map(c),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum FusionParams {
    Bimodal(CoAttentionParams),
    Unimodal { modality: Modality, blocks: Vec<SubBlockParams> },
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub visual_encoder: Option<PatchEncoder>,
    pub audio_encoder: Option<PatchEncoder>,
    pub fusion: FusionParams,
    pub lstm: Option<LstmParams>,
    pub attn_pool: Option<AttnPoolParams>,
    pub head: Linear,
}

/// Output of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `1 × outputs` probabilities.
    pub prediction: Var,
    /// `1 × n` attention weights when interpretable.
    pub alphas: Option<Var>,
    /// `1 × d_model` joint representation per segment.
    pub fused_last: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub alphas: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Element = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub params: ModelParams,
}

impl<T: Element> Model<T> {
    /// Deterministic initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let c = &config;
        let visual_encoder = if c.variant.uses(Modality::Visual) && c.visual_input == InputKind::Raw {
            let patch_dim = 3 * c.visual_patch * c.visual_patch;
            Some(PatchEncoder::new(&mut init, Modality::Visual, c.visual_patch, patch_dim, c.visual_tokens(), c.d_model)?)
        } else {
            None
        };
        let audio_encoder = if c.variant.uses(Modality::Audio) && c.audio_input == InputKind::Raw {
            let patch_dim = 3 * c.audio_patch_frames * c.mfcc.mfcc_coeffs;
            Some(PatchEncoder::new(&mut init, Modality::Audio, c.audio_patch_frames, patch_dim, c.audio_tokens(), c.d_model)?)
        } else {
            None
        };
        let fusion = match c.variant {
            Variant::SaCa | Variant::CoAttnNoLstm => FusionParams::Bimodal(CoAttentionParams::new(
                &mut init,
                c.d_model,
                c.heads,
                c.depth,
                true,
                c.standard_block,
            )?),
            Variant::SaSa => FusionParams::Bimodal(CoAttentionParams::new(
                &mut init,
                c.d_model,
                c.heads,
                c.depth,
                false,
                c.standard_block,
            )?),
            Variant::AudioOnly | Variant::VisionOnly => {
                let modality = if c.variant == Variant::AudioOnly {
                    Modality::Audio
                } else {
                    Modality::Visual
                };
                let blocks = (0..c.depth)
                    .map(|l| {
                        SubBlockParams::new(
                            &mut init,
                            &format!("unimodal{l}.{}.self", modality.name()),
                            c.d_model,
                            c.heads,
                            c.standard_block,
                        )
                    })
                    .collect::<Result<_>>()?;
                FusionParams::Unimodal { modality, blocks }
            }
        };
        let lstm = if c.variant.has_lstm() {
            Some(LstmParams::new(&mut init, c.d_model, c.d_hidden)?)
        } else {
            None
        };
        let attn_pool = if c.interpretable {
            Some(AttnPoolParams::new(&mut init, c.d_hidden, c.d_attn)?)
        } else {
            None
        };
        let head_in = if c.variant.has_lstm() { c.d_hidden } else { c.d_model };
        let head = Linear::new(&mut init, "head", head_in, c.task.outputs(), true)?;
        let params = ModelParams {
            visual_encoder,
            audio_encoder,
            fusion,
            lstm,
            attn_pool,
            head,
        };
        Ok(Model { config, store, params })
    }

    /// Same architecture, different element type.
    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            params: self.params.clone(),
        }
    }

    fn modality_tokens(
        &self,
        tape: &mut Tape<'_, T>,
        input: Option<&ModalityInput<T>>,
        modality: Modality,
        segment: usize,
    ) -> Result<Var> {
        let input = input.ok_or_else(|| {
            Error::Input(format!(
                "segment {segment} lacks {} input required by {}",
                modality.name(),
                self.config.variant
            ))
        })?;
        let encoder = match modality {
            Modality::Visual => self.params.visual_encoder.as_ref(),
            Modality::Audio => self.params.audio_encoder.as_ref(),
        };
        match (input, encoder) {
            (ModalityInput::Tokens(t), None) => {
                let (_, w) = t.dims2()?;
                if w != self.config.d_model {
                    return Err(dim_err!("{} tokens have width {w}, model expects {}", modality.name(), self.config.d_model));
                }
                Ok(tape.constant(t.clone()))
            }
            (ModalityInput::Frames(f), Some(enc)) if modality == Modality::Visual => encode_visual(tape, f, enc),
            (ModalityInput::Mfcc(m), Some(enc)) if modality == Modality::Audio => encode_audio(tape, m, enc),
            _ => Err(Error::Input(format!(
                "segment {segment}: {} input kind does not match the model configuration",
                modality.name()
            ))),
        }
    }

    /// Joint representation `F_i` (`1 × d_model`) of one segment.
    pub fn fuse_segment(&self, tape: &mut Tape<'_, T>, seg: &SegmentInput<T>, index: usize) -> Result<Var> {
        match &self.params.fusion {
            FusionParams::Bimodal(co) => {
                let zv = self.modality_tokens(tape, seg.visual.as_ref(), Modality::Visual, index)?;
                let za = self.modality_tokens(tape, seg.audio.as_ref(), Modality::Audio, index)?;
                let (fv, fa) = co_attention_block(tape, zv, za, co)?;
                fuse_modalities(tape, fv, fa, &co.fusion)
            }
            FusionParams::Unimodal { modality, blocks } => {
                let input = match modality {
                    Modality::Visual => seg.visual.as_ref(),
                    Modality::Audio => seg.audio.as_ref(),
                };
                let mut z = self.modality_tokens(tape, input, *modality, index)?;
                for b in blocks {
                    z = self_attention_subblock(tape, z, b)?;
                }
                tape.mean_rows(z)
            }
        }
    }

    /// Route one sample through the configured variant.
    pub fn forward(&self, tape: &mut Tape<'_, T>, sample: &SampleInput<T>) -> Result<ForwardOutput> {
        let n = sample.segments.len();
        if n == 0 {
            return Err(Error::Input("sample has no segments".into()));
        }
        let fused = sample
            .segments
            .iter()
            .enumerate()
            .map(|(i, seg)| self.fuse_segment(tape, seg, i))
            .collect::<Result<Vec<_>>>()?;
        let fused_last = *fused.last().unwrap();
        let (summary, alphas) = match &self.params.lstm {
            Some(lstm) => {
                let states = run_lstm(tape, &fused, lstm)?;
                match &self.params.attn_pool {
                    Some(ap) => {
                        let hidden: Vec<Var> = states.iter().map(|s| s.h).collect();
                        let (ctx, alphas) = attention_pool(tape, &hidden, ap)?;
                        (ctx, Some(alphas))
                    }
                    None => (states.last().unwrap().h, None),
                }
            }
            None => {
                let stacked = tape.concat_rows(&fused)?;
                (tape.mean_rows(stacked)?, None)
            }
        };
        let prediction = predict(tape, summary, &self.params.head)?;
        Ok(ForwardOutput {
            prediction,
            alphas,
            fused_last,
        })
    }

    pub fn predict(&self, sample: &SampleInput<T>) -> Result<Prediction> {
        let mut tape = Tape::with_params(&self.store);
        let out = self.forward(&mut tape, sample)?;
        let to64 = |v: Var| tape.value(v).data().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        Ok(Prediction {
            values: to64(out.prediction),
            alphas: out.alphas.map(to64),
        })
    }

    /// Loss for one sample recorded on `tape`.
    pub fn loss(&self, tape: &mut Tape<'_, T>, sample: &SampleInput<T>, target: &[T]) -> Result<Var> {
        let out = self.forward(tape, sample)?;
        crate::train::compute_loss(tape, out.prediction, target, &self.config.task)
    }

    /// Loss value and parameter gradients for one sample.
    pub fn loss_and_grads(&self, sample: &SampleInput<T>, target: &[T]) -> Result<(T, Grads<T>)> {
        let mut tape = Tape::with_params(&self.store);
        let loss = self.loss(&mut tape, sample, target)?;
        let value = tape.value(loss).data()[0];
        Ok((value, tape.backward(loss)?.into_param_grads()))
    }
}
