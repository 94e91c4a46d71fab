//! Audio front end: PCM input and three-channel MFCC images.

pub mod fft;
mod mfcc;
mod pcm;

pub use mfcc::{
    compute_deltas, compute_mfcc, dct_matrix, hamming, hz_to_mel, log_mel_spectrogram, mel_centers,
    mel_filterbank, mel_to_hz, stack_mfcc_image, MfccConfig, MfccImage, LOG_FLOOR,
};
pub use pcm::{decode_f64le, decode_s16le, decode_wav, encode_s16le, encode_wav, read_pcm, PcmAudio, PcmEncoding};
