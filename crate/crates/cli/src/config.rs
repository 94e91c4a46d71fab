//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Later assignments override earlier ones, so command-line
//! `--set key=value` pairs (applied after the file) win.

use std::path::{Path, PathBuf};

use sec2sec_core::data::{SyntheticMode, SyntheticSpec};
use sec2sec_core::model::{InputKind, ModelConfig, Task};
use sec2sec_core::train::TrainConfig;
use sec2sec_core::{Error, Result};

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "S2S_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fraction of the training manifest held out for validation when no
    /// validation manifest is given.
    pub val_fraction: f64,
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    /// Whether `seed` was set explicitly (file or flag).
    pub seed_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.2,
            manifest: None,
            val_manifest: None,
            test_manifest: None,
            synthetic: SyntheticSpec::default(),
            seed_set: false,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "variant",
    "n_segments",
    "frames_per_segment",
    "d_model",
    "d_hidden",
    "d_attn",
    "heads",
    "depth",
    "standard_block",
    "interpretable",
    "task",
    "label",
    "traits",
    "visual_input",
    "audio_input",
    "visual_patch",
    "audio_patch_frames",
    "resize_short_side",
    "center_crop",
    "sample_rate",
    "frame_length",
    "hop",
    "fft_size",
    "mel_bins",
    "mfcc_coeffs",
    "delta_window",
    "max_epochs",
    "patience",
    "batch_size",
    "lr_grid",
    "seed",
    "val_fraction",
    "manifest",
    "val_manifest",
    "test_manifest",
    "synthetic_mode",
    "synthetic_tokens",
    "synthetic_noise",
    "synthetic_train",
    "synthetic_test",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for key `{key}`"))),
    }
}

fn parse_kind(key: &str, value: &str) -> Result<InputKind> {
    match value.to_ascii_lowercase().as_str() {
        "tokens" => Ok(InputKind::Tokens),
        "raw" => Ok(InputKind::Raw),
        _ => Err(Error::Config(format!("`{key}` must be tokens or raw, got `{value}`"))),
    }
}

fn kind_name(k: InputKind) -> &'static str {
    match k {
        InputKind::Tokens => "tokens",
        InputKind::Raw => "raw",
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn set_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let v = value;
        match key {
            "variant" => m.variant = v.parse()?,
            "n_segments" => m.n_segments = parse(key, v)?,
            "frames_per_segment" => m.frames_per_segment = parse(key, v)?,
            "d_model" => m.d_model = parse(key, v)?,
            "d_hidden" => m.d_hidden = parse(key, v)?,
            "d_attn" => m.d_attn = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "depth" => m.depth = parse(key, v)?,
            "standard_block" => m.standard_block = parse_bool(key, v)?,
            "interpretable" => m.interpretable = parse_bool(key, v)?,
            "task" => {
                m.task = match v.to_ascii_lowercase().as_str() {
                    "binary" => Task::Binary {
                        label: match &m.task {
                            Task::Binary { label } => label.clone(),
                            Task::Traits { .. } => None,
                        },
                    },
                    "traits" => match &m.task {
                        Task::Traits { .. } => m.task.clone(),
                        Task::Binary { .. } => Task::big_five(),
                    },
                    _ => return Err(Error::Config(format!("`task` must be binary or traits, got `{v}`"))),
                }
            }
            "label" => match &mut m.task {
                Task::Binary { label } => *label = (!v.is_empty()).then(|| v.to_string()),
                Task::Traits { .. } => return Err(Error::Config("`label` applies to the binary task only".into())),
            },
            "traits" => {
                let names: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                if names.is_empty() {
                    return Err(Error::Config("`traits` needs at least one name".into()));
                }
                m.task = Task::Traits { names };
            }
            "visual_input" => m.visual_input = parse_kind(key, v)?,
            "audio_input" => m.audio_input = parse_kind(key, v)?,
            "visual_patch" => m.visual_patch = parse(key, v)?,
            "audio_patch_frames" => m.audio_patch_frames = parse(key, v)?,
            "resize_short_side" => m.frames.resize_short_side = parse(key, v)?,
            "center_crop" => m.frames.center_crop = parse(key, v)?,
            "sample_rate" => m.mfcc.sample_rate = parse(key, v)?,
            "frame_length" => m.mfcc.frame_length = parse(key, v)?,
            "hop" => m.mfcc.hop = parse(key, v)?,
            "fft_size" => m.mfcc.fft_size = parse(key, v)?,
            "mel_bins" => m.mfcc.mel_bins = parse(key, v)?,
            "mfcc_coeffs" => m.mfcc.mfcc_coeffs = parse(key, v)?,
            "delta_window" => m.mfcc.delta_window = parse(key, v)?,
            "max_epochs" => t.max_epochs = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr_grid" => {
                t.lr_grid = v
                    .split(',')
                    .map(|s| parse::<f64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "seed" => {
                t.seed = parse(key, v)?;
                self.seed_set = true;
            }
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "manifest" => self.manifest = set_path(v),
            "val_manifest" => self.val_manifest = set_path(v),
            "test_manifest" => self.test_manifest = set_path(v),
            "synthetic_mode" => self.synthetic.mode = v.parse::<SyntheticMode>()?,
            "synthetic_tokens" => self.synthetic.tokens_per_modality = parse(key, v)?,
            "synthetic_noise" => self.synthetic.noise = parse(key, v)?,
            "synthetic_train" => self.synthetic.train_size = parse(key, v)?,
            "synthetic_test" => self.synthetic.test_size = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        // manifest paths in a file are relative to that file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.val_manifest, &mut cfg.test_manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Apply `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{p}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Fall back to the environment seed when none was configured.
    pub fn resolve_seed(&mut self) -> Result<()> {
        if !self.seed_set {
            if let Ok(v) = std::env::var(SEED_ENV) {
                self.train.seed = parse(SEED_ENV, v.trim())?;
            }
            self.seed_set = true;
        }
        self.synthetic.seed = self.train.seed;
        self.synthetic.n_segments = self.model.n_segments;
        self.synthetic.dim = self.model.d_model;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} must lie in (0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        let m = &self.model;
        let t = &self.train;
        match key {
            "variant" => m.variant.to_string(),
            "n_segments" => m.n_segments.to_string(),
            "frames_per_segment" => m.frames_per_segment.to_string(),
            "d_model" => m.d_model.to_string(),
            "d_hidden" => m.d_hidden.to_string(),
            "d_attn" => m.d_attn.to_string(),
            "heads" => m.heads.to_string(),
            "depth" => m.depth.to_string(),
            "standard_block" => m.standard_block.to_string(),
            "interpretable" => m.interpretable.to_string(),
            "task" => if m.task.is_binary() { "binary" } else { "traits" }.to_string(),
            "label" => match &m.task {
                Task::Binary { label } => label.clone().unwrap_or_default(),
                Task::Traits { .. } => String::new(),
            },
            "traits" => match &m.task {
                Task::Traits { names } => names.join(","),
                Task::Binary { .. } => String::new(),
            },
            "visual_input" => kind_name(m.visual_input).into(),
            "audio_input" => kind_name(m.audio_input).into(),
            "visual_patch" => m.visual_patch.to_string(),
            "audio_patch_frames" => m.audio_patch_frames.to_string(),
            "resize_short_side" => m.frames.resize_short_side.to_string(),
            "center_crop" => m.frames.center_crop.to_string(),
            "sample_rate" => m.mfcc.sample_rate.to_string(),
            "frame_length" => m.mfcc.frame_length.to_string(),
            "hop" => m.mfcc.hop.to_string(),
            "fft_size" => m.mfcc.fft_size.to_string(),
            "mel_bins" => m.mfcc.mel_bins.to_string(),
            "mfcc_coeffs" => m.mfcc.mfcc_coeffs.to_string(),
            "delta_window" => m.mfcc.delta_window.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "patience" => t.patience.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr_grid" => t.lr_grid.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            "seed" => t.seed.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "manifest" => opt_path(&self.manifest),
            "val_manifest" => opt_path(&self.val_manifest),
            "test_manifest" => opt_path(&self.test_manifest),
            "synthetic_mode" => self.synthetic.mode.to_string(),
            "synthetic_tokens" => self.synthetic.tokens_per_modality.to_string(),
            "synthetic_noise" => self.synthetic.noise.to_string(),
            "synthetic_train" => self.synthetic.train_size.to_string(),
            "synthetic_test" => self.synthetic.test_size.to_string(),
            _ => unreachable!("every listed key has a value"),
        }
    }

    /// Fully resolved configuration in the same `key = value` syntax.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let v = self.value(key);
            if v.is_empty() && matches!(*key, "label" | "traits" | "manifest" | "val_manifest" | "test_manifest") {
                continue;
            }
            s.push_str(&format!("{key} = {v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sec2sec_core::model::Variant;

    #[test]
    fn unknown_key_is_named() {
        let mut c = RunConfig::default();
        match c.apply_text("d_model = 32\nlearning_rate = 0.1\n") {
            Err(Error::Config(m)) => assert!(m.contains("learning_rate")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn echo_reparses_to_same_config() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nvariant = sa-sa\nlr_grid = 0.001, 0.003\ntask = traits\nseed = 9\ninterpretable = yes\n")
            .unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.echo()).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.model.variant, Variant::SaSa);
        assert_eq!(d.train.lr_grid, vec![0.001, 0.003]);
        assert_eq!(d.model.task.outputs(), 5);
    }

    #[test]
    fn bad_values_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("d_model", "abc").is_err());
        assert!(c.set("standard_block", "maybe").is_err());
        assert!(c.set("variant", "transformer").is_err());
        assert!(c.apply_text("no equals sign").is_err());
    }

    #[test]
    fn later_assignment_wins() {
        let mut c = RunConfig::default();
        c.apply_text("d_model = 32\n").unwrap();
        c.apply_overrides(&["d_model=16".into()]).unwrap();
        assert_eq!(c.model.d_model, 16);
    }
}
