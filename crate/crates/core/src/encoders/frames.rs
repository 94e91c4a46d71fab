//! 8-bit RGB frames: PPM (P6) and PNG readers, sampling, resize, crop and
//! normalization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "{width}x{height} frame needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(RgbFrame { width, height, pixels })
    }

    pub fn solid(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        RgbFrame { width, height, pixels }
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c] as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramePreprocessSpec {
    pub resize_short_side: usize,
    pub center_crop: usize,
}

impl Default for FramePreprocessSpec {
    fn default() -> Self {
        FramePreprocessSpec {
            resize_short_side: 128,
            center_crop: 112,
        }
    }
}

impl FramePreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.center_crop == 0 || self.center_crop > self.resize_short_side {
            return Err(Error::Config(format!(
                "crop {} must be in 1..={}",
                self.center_crop, self.resize_short_side
            )));
        }
        Ok(())
    }
}

pub fn normalize_pixel(v: f64) -> f64 {
    (v / 255.0 - 0.5) / 0.5
}

/// Indices of `m` frames spread evenly over `t` frames.
pub fn sample_indices(t: usize, m: usize) -> Vec<usize> {
    match (t, m) {
        (_, 0) | (0, _) => Vec::new(),
        (_, 1) => vec![(t - 1) / 2],
        _ => (0..m).map(|k| k * (t - 1) / (m - 1)).collect(),
    }
}

/// Bilinear resize (half-pixel centers) so the short side equals `short`.
pub fn resize_short_side(frame: &RgbFrame, short: usize) -> RgbPlane {
    let (w, h) = (frame.width, frame.height);
    let (ow, oh) = if w <= h {
        (short, ((h * short) as f64 / w as f64).round() as usize)
    } else {
        (((w * short) as f64 / h as f64).round() as usize, short)
    };
    let sx = w as f64 / ow as f64;
    let sy = h as f64 / oh as f64;
    let mut data = vec![0.0; 3 * ow * oh];
    for y in 0..oh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for x in 0..ow {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            for c in 0..3 {
                let top = frame.at(x0, y0, c) * (1.0 - dx) + frame.at(x1, y0, c) * dx;
                let bottom = frame.at(x0, y1, c) * (1.0 - dx) + frame.at(x1, y1, c) * dx;
                data[(c * oh + y) * ow + x] = top * (1.0 - dy) + bottom * dy;
            }
        }
    }
    RgbPlane {
        width: ow,
        height: oh,
        data,
    }
}

/// Channel-major float image.
pub struct RgbPlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Resize, center-crop and normalize one frame into `3 × crop × crop`.
pub fn preprocess_frame(frame: &RgbFrame, spec: &FramePreprocessSpec) -> Vec<f64> {
    let plane = resize_short_side(frame, spec.resize_short_side);
    let crop = spec.center_crop;
    let ox = (plane.width - crop) / 2;
    let oy = (plane.height - crop) / 2;
    let mut out = Vec::with_capacity(3 * crop * crop);
    for c in 0..3 {
        for y in 0..crop {
            let row = (c * plane.height + oy + y) * plane.width + ox;
            out.extend(plane.data[row..row + crop].iter().map(|&v| normalize_pixel(v)));
        }
    }
    out
}

/// Pick `m` frames of a segment and preprocess each: `m × 3 × crop × crop`.
pub fn sample_and_preprocess_frames<T: Element>(
    frames: &[RgbFrame],
    m: usize,
    spec: &FramePreprocessSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    if frames.is_empty() {
        return Err(Error::Input("segment has no frames".into()));
    }
    if m == 0 {
        return Err(Error::Input("frames per segment must be at least 1".into()));
    }
    let crop = spec.center_crop;
    let mut data = Vec::with_capacity(m * 3 * crop * crop);
    let indices = if frames.len() == 1 {
        vec![0; m]
    } else {
        sample_indices(frames.len(), m)
    };
    for i in indices {
        data.extend(preprocess_frame(&frames[i], spec).into_iter().map(T::lit));
    }
    Tensor::new(vec![m, 3, crop, crop], data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbFrame> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P6" {
        return Err(Error::UnsupportedFormat("only binary PPM (P6) is supported".into()));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad PPM header field".into()))
    };
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PPM maxval {maxval} (only 8-bit)")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Format("truncated PPM raster".into()));
    }
    RgbFrame::new(width, height, bytes[pos..pos + need].to_vec())
}

pub fn encode_ppm(frame: &RgbFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbFrame> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    RgbFrame::new(w as usize, h as usize, img.into_raw())
}

pub fn load_frame(path: &Path) -> Result<RgbFrame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm") => decode_ppm(&bytes),
        Some("png") => decode_png(&bytes),
        other => Err(Error::UnsupportedFormat(format!("frame extension {other:?}"))),
    }
}

/// Frame files of one segment directory in name order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("ppm") | Some("png")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_segment_frames(dir: &Path) -> Result<Vec<RgbFrame>> {
    frame_files(dir)?.iter().map(|p| load_frame(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_indices() {
        assert_eq!(sample_indices(25, 4), vec![0, 8, 16, 24]);
        assert_eq!(sample_indices(7, 1), vec![3]);
        assert_eq!(sample_indices(3, 5), vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_pixel(255.0), 1.0);
        assert_eq!(normalize_pixel(0.0), -1.0);
        let white = RgbFrame::solid(160, 128, [255, 255, 255]);
        let t: Tensor<f64> = sample_and_preprocess_frames(&[white], 1, &FramePreprocessSpec::default()).unwrap();
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_frame_is_repeated() {
        let f = RgbFrame::new(2, 2, (0..12).map(|i| i as u8 * 20).collect()).unwrap();
        let spec = FramePreprocessSpec {
            resize_short_side: 2,
            center_crop: 2,
        };
        let t: Tensor<f64> = sample_and_preprocess_frames(&[f], 3, &spec).unwrap();
        assert_eq!(t.shape(), &[3, 3, 2, 2]);
        let plane = 12;
        assert_eq!(t.data()[..plane], t.data()[plane..2 * plane]);
        assert_eq!(t.data()[..plane], t.data()[2 * plane..]);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let f = RgbFrame::new(3, 2, (0..18).map(|i| i as u8).collect()).unwrap();
        let p = resize_short_side(&f, 2);
        assert_eq!((p.width, p.height), (3, 2));
        assert_eq!(p.data[0..6], [0.0, 3.0, 6.0, 9.0, 12.0, 15.0]);
    }

    #[test]
    fn empty_segment_rejected() {
        let r = sample_and_preprocess_frames::<f32>(&[], 4, &FramePreprocessSpec::default());
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn ppm_roundtrip_and_comments() {
        let f = RgbFrame::new(2, 1, vec![1, 2, 3, 250, 251, 252]).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&f)).unwrap(), f);
        let with_comment = b"P6\n# made by hand\n2 1\n255\n\x01\x02\x03\xfa\xfb\xfc";
        assert_eq!(decode_ppm(with_comment).unwrap(), f);
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n0 0 0"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x00"), Err(Error::Format(_))));
    }
}
