//! Headerless PCM readers and a minimal WAV adapter (PCM-16 mono).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcmEncoding {
    /// Little-endian IEEE-754 doubles.
    F64le,
    /// Little-endian signed 16-bit integers, scaled to [-1, 1).
    S16le,
    /// RIFF/WAVE container holding PCM-16 mono.
    Wav,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcmAudio {
    pub sample_rate: usize,
    pub samples: Vec<f64>,
}

pub fn decode_f64le(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} bytes is not a whole number of f64 samples", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn decode_s16le(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::Format("odd byte count for 16-bit PCM".into()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect())
}

pub fn encode_s16le(samples: &[f64]) -> Vec<u8> {
    samples
        .iter()
        .flat_map(|&s| ((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16).to_le_bytes())
        .collect()
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn decode_wav(bytes: &[u8]) -> Result<PcmAudio> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let mut at = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body = at + 8;
        if body + size > bytes.len() {
            return Err(Error::Format("truncated WAV chunk".into()));
        }
        if id == b"fmt " {
            if size < 16 {
                return Err(Error::Format("short fmt chunk".into()));
            }
            fmt = Some((
                u16_at(bytes, body),
                u16_at(bytes, body + 2),
                u32_at(bytes, body + 4),
                u16_at(bytes, body + 14),
            ));
        } else if id == b"data" {
            let (tag, channels, rate, bits) =
                fmt.ok_or_else(|| Error::Format("data chunk before fmt chunk".into()))?;
            if tag != 1 || channels != 1 || bits != 16 {
                return Err(Error::UnsupportedFormat(format!(
                    "WAV format tag {tag}, {channels} channels, {bits} bits (only PCM-16 mono)"
                )));
            }
            return Ok(PcmAudio {
                sample_rate: rate as usize,
                samples: decode_s16le(&bytes[body..body + size])?,
            });
        }
        at = body + size + (size & 1);
    }
    Err(Error::Format("WAV file has no data chunk".into()))
}

pub fn encode_wav(samples: &[f64], sample_rate: usize) -> Vec<u8> {
    let data = encode_s16le(samples);
    let mut out = Vec::with_capacity(44 + data.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(sample_rate as u32).to_le_bytes());
    out.extend_from_slice(&(sample_rate as u32 * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&data);
    out
}

/// Read a PCM file. Headerless encodings take their rate from `declared_rate`.
pub fn read_pcm(path: &Path, encoding: PcmEncoding, declared_rate: usize) -> Result<PcmAudio> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match encoding {
        PcmEncoding::F64le => Ok(PcmAudio {
            sample_rate: declared_rate,
            samples: decode_f64le(&bytes)?,
        }),
        PcmEncoding::S16le => Ok(PcmAudio {
            sample_rate: declared_rate,
            samples: decode_s16le(&bytes)?,
        }),
        PcmEncoding::Wav => decode_wav(&bytes),
    }
}
