//! MFCC pipeline checked against an independent reference.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sec2sec_core::audio::{MfccConfig, MfccImage};

#[path = "support/mfcc_reference.rs"]
mod mfcc_reference;
use mfcc_reference::reference;

#[test]
fn mfcc_image_matches_naive_reference() {
    let cfg = MfccConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let amp = rng.random_range(0.05..1.0);
        let signal: Vec<f64> = (0..cfg.sample_rate).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
        let image = MfccImage::from_signal(&signal, &cfg).unwrap();
        assert_eq!(image.frames(), 98);
        assert_eq!(image.coeffs(), cfg.mfcc_coeffs);
        let expect = reference(&signal, &cfg);
        for (ch, plane) in expect.iter().enumerate() {
            let got = image.channel(ch);
            assert_eq!(plane.len(), got.shape()[0]);
            for (t, row) in plane.iter().enumerate() {
                for (j, want) in row.iter().enumerate() {
                    worst = worst.max((got.row(t)[j] - want).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-6, "max abs deviation {worst:e}");
}

#[test]
fn tone_peaks_in_matching_mel_band() {
    let cfg = MfccConfig::default();
    let centers = sec2sec_core::audio::mel_centers(&cfg);
    let target = 12;
    let signal: Vec<f64> = (0..cfg.sample_rate)
        .map(|i| (2.0 * PI * centers[target] * i as f64 / cfg.sample_rate as f64).sin())
        .collect();
    let logmel = sec2sec_core::audio::log_mel_spectrogram(&signal, &cfg).unwrap();
    let row = logmel.row(50);
    let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    assert_eq!(argmax, target);
}
