//! MFCC front end: Hamming window, power spectrum, HTK mel filterbank,
//! log compression, orthonormal DCT-II, and regression deltas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::fft::power_spectrum;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub sample_rate: usize,
    pub frame_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub mfcc_coeffs: usize,
    pub delta_window: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate: 16_000,
            frame_length: 400,
            hop: 160,
            fft_size: 512,
            mel_bins: 40,
            mfcc_coeffs: 20,
            delta_window: 2,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("mfcc: {msg}")));
        if self.sample_rate == 0 || self.frame_length == 0 || self.mel_bins == 0 || self.mfcc_coeffs == 0 {
            return bad("sample_rate, frame_length, mel_bins and mfcc_coeffs must be positive");
        }
        if self.hop == 0 {
            return bad("hop must be at least 1");
        }
        if !self.fft_size.is_power_of_two() {
            return bad("fft_size must be a power of two");
        }
        if self.frame_length > self.fft_size {
            return bad("frame_length exceeds fft_size");
        }
        if self.mfcc_coeffs > self.mel_bins {
            return bad("mfcc_coeffs exceeds mel_bins");
        }
        if self.delta_window == 0 {
            return bad("delta_window must be at least 1");
        }
        Ok(())
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.frame_length {
            0
        } else {
            (samples - self.frame_length) / self.hop + 1
        }
    }

    /// Frames produced by exactly one second of audio.
    pub fn frames_per_second(&self) -> usize {
        self.frame_count(self.sample_rate)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Triangular unit-peak filters between 0 Hz and Nyquist, evaluated at the
/// FFT bin frequencies. Returns `mel_bins` rows of `fft_size/2 + 1` weights.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.fft_size / 2 + 1;
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|j| mel_to_hz(top * j as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    (0..cfg.mel_bins)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
                    if f >= lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f <= hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Center frequency of each mel filter in Hz.
pub fn mel_centers(cfg: &MfccConfig) -> Vec<f64> {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    (1..=cfg.mel_bins)
        .map(|j| mel_to_hz(top * j as f64 / (cfg.mel_bins + 1) as f64))
        .collect()
}

/// Orthonormal DCT-II matrix, `size × size`, row k = basis k.
pub fn dct_matrix(size: usize) -> Vec<Vec<f64>> {
    let n = size as f64;
    (0..size)
        .map(|k| {
            let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..size)
                .map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .collect()
        })
        .collect()
}

fn check_signal(signal: &[f64], cfg: &MfccConfig) -> Result<()> {
    cfg.validate()?;
    if signal.len() < cfg.frame_length {
        return Err(Error::Input(format!(
            "signal of {} samples is shorter than one frame ({})",
            signal.len(),
            cfg.frame_length
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite audio sample".into()));
    }
    Ok(())
}

/// Log mel energies, `frames × mel_bins`.
pub fn log_mel_spectrogram(signal: &[f64], cfg: &MfccConfig) -> Result<Tensor<f64>> {
    check_signal(signal, cfg)?;
    let window = hamming(cfg.frame_length);
    let bank = mel_filterbank(cfg);
    let frames = cfg.frame_count(signal.len());
    let mut out = Vec::with_capacity(frames * cfg.mel_bins);
    let mut buf = vec![0.0; cfg.frame_length];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (b, (&s, &w)) in buf
            .iter_mut()
            .zip(signal[start..start + cfg.frame_length].iter().zip(&window))
        {
            *b = s * w;
        }
        let power = power_spectrum(&buf, cfg.fft_size);
        out.extend(bank.iter().map(|filter| {
            let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            (e + LOG_FLOOR).ln()
        }));
    }
    Tensor::new(vec![frames, cfg.mel_bins], out)
}

/// Static MFCCs, `frames × mfcc_coeffs`.
pub fn compute_mfcc(signal: &[f64], cfg: &MfccConfig) -> Result<Tensor<f64>> {
    let logmel = log_mel_spectrogram(signal, cfg)?;
    let frames = logmel.shape()[0];
    let dct = dct_matrix(cfg.mel_bins);
    let mut out = Vec::with_capacity(frames * cfg.mfcc_coeffs);
    for f in 0..frames {
        let row = logmel.row(f);
        out.extend(
            dct[..cfg.mfcc_coeffs]
                .iter()
                .map(|basis| basis.iter().zip(row).map(|(a, b)| a * b).sum::<f64>()),
        );
    }
    Tensor::new(vec![frames, cfg.mfcc_coeffs], out)
}

/// Regression deltas over a window of `n` frames on each side, replicating
/// the boundary frames.
pub fn compute_deltas(c: &Tensor<f64>, n: usize) -> Result<Tensor<f64>> {
    let (frames, coeffs) = c.dims2()?;
    if n == 0 {
        return Err(Error::Input("delta window must be at least 1".into()));
    }
    if frames < 2 * n + 1 {
        return Err(Error::Input(format!(
            "{frames} frames are too few for a delta window of {n}"
        )));
    }
    let denom = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    let last = frames as isize - 1;
    let at = |t: isize| t.clamp(0, last) as usize;
    let mut out = vec![0.0; frames * coeffs];
    for t in 0..frames as isize {
        for k in 1..=n as isize {
            let (ahead, behind) = (c.row(at(t + k)), c.row(at(t - k)));
            let dst = &mut out[t as usize * coeffs..(t as usize + 1) * coeffs];
            for j in 0..coeffs {
                dst[j] += k as f64 * (ahead[j] - behind[j]);
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= denom);
    Tensor::new(vec![frames, coeffs], out)
}

/// Three-channel MFCC "image": channel 0 static, 1 delta, 2 delta-delta.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccImage {
    data: Tensor<f64>,
}

impl MfccImage {
    pub const CHANNELS: usize = 3;

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn coeffs(&self) -> usize {
        self.data.shape()[2]
    }

    /// `3 × frames × coeffs`.
    pub fn tensor(&self) -> &Tensor<f64> {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> Tensor<f64> {
        let plane = self.frames() * self.coeffs();
        let data = self.data.data()[ch * plane..(ch + 1) * plane].to_vec();
        Tensor::new(vec![self.frames(), self.coeffs()], data).expect("plane shape")
    }

    pub fn unstack(&self) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        (self.channel(0), self.channel(1), self.channel(2))
    }

    /// Full pipeline for one segment of audio.
    pub fn from_signal(signal: &[f64], cfg: &MfccConfig) -> Result<Self> {
        let c = compute_mfcc(signal, cfg)?;
        let d1 = compute_deltas(&c, cfg.delta_window)?;
        let d2 = compute_deltas(&d1, cfg.delta_window)?;
        stack_mfcc_image(&c, &d1, &d2)
    }
}

pub fn stack_mfcc_image(c: &Tensor<f64>, d1: &Tensor<f64>, d2: &Tensor<f64>) -> Result<MfccImage> {
    let (frames, coeffs) = c.dims2()?;
    if d1.shape() != c.shape() || d2.shape() != c.shape() {
        return Err(dim_err!(
            "channel shapes differ: {:?}, {:?}, {:?}",
            c.shape(),
            d1.shape(),
            d2.shape()
        ));
    }
    let data = [c.data(), d1.data(), d2.data()].concat();
    Ok(MfccImage {
        data: Tensor::new(vec![3, frames, coeffs], data)?,
    })
}
