//! Loop-based MFCC reference sharing no code with the library: naive DFT,
//! explicit triangular filters, explicit DCT and regression deltas.

use std::f64::consts::PI;

use sec2sec_core::audio::{MfccConfig, LOG_FLOOR};

fn mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * ((m / 1127.0).exp() - 1.0)
}

fn triangle(f: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if f < lo || f > hi {
        0.0
    } else if f <= mid {
        (f - lo) / (mid - lo)
    } else {
        (hi - f) / (hi - mid)
    }
}

fn deltas(c: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let t_max = c.len() as i64 - 1;
    let norm: f64 = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    (0..c.len() as i64)
        .map(|t| {
            (0..c[0].len())
                .map(|j| {
                    let mut acc = 0.0;
                    for k in 1..=n as i64 {
                        let fwd = &c[(t + k).min(t_max) as usize];
                        let back = &c[(t - k).max(0) as usize];
                        acc += k as f64 * (fwd[j] - back[j]);
                    }
                    acc / norm
                })
                .collect()
        })
        .collect()
}

/// `[static, delta, delta-delta]`, each `frames × coeffs`.
pub fn reference(signal: &[f64], cfg: &MfccConfig) -> [Vec<Vec<f64>>; 3] {
    let (len, nfft, sr) = (cfg.frame_length, cfg.fft_size, cfg.sample_rate as f64);
    let bins = nfft / 2 + 1;
    let cos_t: Vec<Vec<f64>> = (0..bins)
        .map(|k| (0..len).map(|i| (2.0 * PI * (k * i) as f64 / nfft as f64).cos()).collect())
        .collect();
    let sin_t: Vec<Vec<f64>> = (0..bins)
        .map(|k| (0..len).map(|i| (2.0 * PI * (k * i) as f64 / nfft as f64).sin()).collect())
        .collect();
    let top = mel(sr / 2.0);
    let edge = |j: usize| inv_mel(top * j as f64 / (cfg.mel_bins + 1) as f64);
    let frames = (signal.len() - len) / cfg.hop + 1;
    let mut stat = Vec::new();
    for f in 0..frames {
        let x: Vec<f64> = (0..len)
            .map(|i| {
                let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
                signal[f * cfg.hop + i] * w
            })
            .collect();
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let re: f64 = (0..len).map(|i| x[i] * cos_t[k][i]).sum();
                let im: f64 = (0..len).map(|i| x[i] * sin_t[k][i]).sum();
                re * re + im * im
            })
            .collect();
        let logmel: Vec<f64> = (0..cfg.mel_bins)
            .map(|m| {
                let e: f64 = (0..bins)
                    .map(|k| triangle(k as f64 * sr / nfft as f64, edge(m), edge(m + 1), edge(m + 2)) * power[k])
                    .sum();
                (e + LOG_FLOOR).ln()
            })
            .collect();
        let nm = cfg.mel_bins as f64;
        stat.push(
            (0..cfg.mfcc_coeffs)
                .map(|q| {
                    let scale = if q == 0 { (1.0 / nm).sqrt() } else { (2.0 / nm).sqrt() };
                    scale
                        * (0..cfg.mel_bins)
                            .map(|m| logmel[m] * (PI * q as f64 * (m as f64 + 0.5) / nm).cos())
                            .sum::<f64>()
                })
                .collect(),
        );
    }
    let d1 = deltas(&stat, cfg.delta_window);
    let d2 = deltas(&d1, cfg.delta_window);
    [stat, d1, d2]
}
