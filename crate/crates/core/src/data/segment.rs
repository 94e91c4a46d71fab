//! Cutting a clip into one-second segments.

use std::ops::Range;

use crate::encoders::RgbFrame;
use crate::error::{Error, Result};

/// A trailing remainder at least this long becomes a padded final segment;
/// anything shorter is dropped.
pub const MIN_TAIL_S: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBounds {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// Source frames covered, clipped to the clip length.
    pub frames: Range<usize>,
    /// Source samples covered, clipped to the clip length.
    pub samples: Range<usize>,
    /// True when the window runs past the end of the clip.
    pub padded: bool,
}

impl SegmentBounds {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

fn count_at(duration_s: f64, rate: f64) -> usize {
    (duration_s * rate + 1e-9).floor() as usize
}

/// Consecutive 1 s windows over a clip of `duration_s` seconds.
pub fn segment_stream(duration_s: f64, fps: f64, sample_rate: usize) -> Result<Vec<SegmentBounds>> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Input(format!("duration {duration_s} must be positive")));
    }
    if !(fps.is_finite() && fps > 0.0) || sample_rate == 0 {
        return Err(Error::Input("frame and sample rates must be positive".into()));
    }
    let whole = (duration_s + 1e-9).floor() as usize;
    let tail = duration_s - whole as f64;
    let n = whole + usize::from(tail >= MIN_TAIL_S - 1e-9 && tail > 1e-9);
    let total_frames = count_at(duration_s, fps);
    let total_samples = count_at(duration_s, sample_rate as f64);
    Ok((0..n)
        .map(|i| {
            let (start, end) = (i as f64, (i + 1) as f64);
            let clip = |rate: f64, total: usize| count_at(start, rate).min(total)..count_at(end, rate).min(total);
            SegmentBounds {
                index: i,
                start_s: start,
                end_s: end,
                frames: clip(fps, total_frames),
                samples: clip(sample_rate as f64, total_samples),
                padded: end > duration_s + 1e-9,
            }
        })
        .collect())
}

/// Frames and samples of one segment, padded to a full second.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMedia {
    pub frames: Vec<RgbFrame>,
    pub samples: Vec<f64>,
}

/// Split decoded media into one-second segments. A padded tail repeats its
/// last frame and zero-fills its audio.
pub fn split_media(frames: &[RgbFrame], fps: f64, samples: &[f64], sample_rate: usize, duration_s: f64) -> Result<Vec<SegmentMedia>> {
    let bounds = segment_stream(duration_s, fps, sample_rate)?;
    let per_seg_frames = count_at(1.0, fps).max(1);
    bounds
        .iter()
        .map(|b| {
            let fr = b.frames.start.min(frames.len())..b.frames.end.min(frames.len());
            let mut seg_frames = frames[fr].to_vec();
            let Some(last) = seg_frames.last().cloned().or_else(|| frames.last().cloned()) else {
                return Err(Error::Input(format!("segment {} has no frames", b.index)));
            };
            seg_frames.resize(per_seg_frames.max(seg_frames.len()), last);
            let sr = b.samples.start.min(samples.len())..b.samples.end.min(samples.len());
            let mut seg_samples = samples[sr].to_vec();
            seg_samples.resize(sample_rate, 0.0);
            Ok(SegmentMedia {
                frames: seg_frames,
                samples: seg_samples,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_rule() {
        assert_eq!(segment_stream(8.0, 25.0, 16000).unwrap().len(), 8);
        assert_eq!(segment_stream(8.4, 25.0, 16000).unwrap().len(), 8);
        let s = segment_stream(8.6, 25.0, 16000).unwrap();
        assert_eq!(s.len(), 9);
        assert!(s[8].padded && !s[7].padded);
        assert_eq!(s[8].frames, 200..215);
        assert_eq!(s[8].samples, 128000..137600);
        assert!(matches!(segment_stream(0.0, 25.0, 16000), Err(Error::Input(_))));
        assert!(matches!(segment_stream(-1.0, 25.0, 16000), Err(Error::Input(_))));
    }

    #[test]
    fn short_clip_rounds_to_one_or_zero() {
        assert_eq!(segment_stream(0.5, 25.0, 16000).unwrap().len(), 1);
        assert_eq!(segment_stream(0.4, 25.0, 16000).unwrap().len(), 0);
    }

    #[test]
    fn padded_tail_repeats_frame_and_zero_fills() {
        let frames: Vec<RgbFrame> = (0..15).map(|i| RgbFrame::solid(4, 4, [i as u8, 0, 0])).collect();
        let samples = vec![0.25; 1600 * 3 / 2];
        let segs = split_media(&frames, 10.0, &samples, 1600, 1.5).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].frames.len(), 10);
        assert!(segs[1].frames[5..].iter().all(|f| f.pixels[0] == 14));
        assert_eq!(segs[1].samples.len(), 1600);
        assert!(segs[1].samples[..800].iter().all(|&v| v == 0.25));
        assert!(segs[1].samples[800..].iter().all(|&v| v == 0.0));
    }
}
