//! Decoded pixel buffers, their luminance projection and region statistics.
//!
//! Everything downstream (patching, filtering, augmentation, the model
//! input path) consumes only the types in this module.

use std::io::Cursor;

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

/// Denominator guard for the Michelson contrast of all-black regions.
pub const MICHELSON_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("encode failed: {0}")]
    Encode(String),
    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),
    #[error("rect {rect:?} out of bounds for {width}x{height} plane")]
    RectOutOfBounds { rect: Rect, width: usize, height: usize },
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

/// Row-major interleaved RGB, 8 bits per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidBuffer(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * Self::CHANNELS {
            return Err(ImagingError::InvalidBuffer(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height * Self::CHANNELS,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Every pixel set to `rgb`. Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    /// Build from a per-pixel function. Panics on zero dimensions.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Plain crop; the rect must lie inside the image.
    pub fn crop(&self, rect: Rect) -> Result<ImageBuffer, ImagingError> {
        if rect.w == 0 || rect.h == 0 || rect.x + rect.w > self.width || rect.y + rect.h > self.height {
            return Err(ImagingError::RectOutOfBounds {
                rect,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(rect.w * rect.h * 3);
        for y in rect.y..rect.y + rect.h {
            let start = (y * self.width + rect.x) * 3;
            data.extend_from_slice(&self.data[start..start + rect.w * 3]);
        }
        Ok(ImageBuffer {
            width: rect.w,
            height: rect.h,
            data,
        })
    }
}

/// Decode a JPEG or PNG stream into RGB. Grayscale is replicated to three
/// channels and alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, ImagingError> {
    let format = image::guess_format(bytes).map_err(|e| ImagingError::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(ImagingError::Decode(format!("unsupported format {format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImagingError::Decode(e.to_string()))?;
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::new(w as usize, h as usize, rgb.into_raw())
}

/// Lossless PNG encoding.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>, ImagingError> {
    let rgb = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| ImagingError::Encode("buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(rgb)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Single-channel luminance in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LuminancePlane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl LuminancePlane {
    /// Samples are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImagingError::InvalidBuffer(format!(
                "luminance plane {width}x{height} with {} samples",
                data.len()
            )));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }
}

/// Rec.601 luma of one RGB pixel, in `[0, 1]`.
#[inline]
pub fn luma(rgb: [u8; 3]) -> f32 {
    let y = (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64) / 255.0;
    y.clamp(0.0, 1.0) as f32
}

pub fn to_luminance(img: &ImageBuffer) -> LuminancePlane {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]))
        .collect();
    LuminancePlane {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Summary statistics of a luminance region.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegionStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p05: f64,
    pub p95: f64,
    pub michelson: f64,
}

impl RegionStats {
    /// Stats of a sample list. Percentiles use nearest rank on the sorted
    /// samples at zero-based index `floor(p * n / 100)`, capped at `n - 1`.
    ///
    /// Panics on an empty slice.
    pub fn from_samples(samples: &[f32]) -> Self {
        assert!(!samples.is_empty(), "region_stats over an empty region");
        let mut sorted: Vec<f32> = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len();
        let rank = |pct: usize| sorted[(n * pct / 100).min(n - 1)] as f64;
        let sum: f64 = sorted.iter().map(|&v| v as f64).sum();
        let mut mean = sum / n as f64;
        let min = sorted[0] as f64;
        let max = sorted[n - 1] as f64;
        // Summation error must not push the mean outside the sample range.
        mean = mean.clamp(min, max);
        let p05 = rank(5);
        let p95 = rank(95);
        let michelson = ((p95 - p05) / (p95 + p05 + MICHELSON_EPS)).max(0.0);
        Self {
            mean,
            min,
            max,
            p05,
            p95,
            michelson,
        }
    }
}

pub fn region_stats(plane: &LuminancePlane, rect: Rect) -> Result<RegionStats, ImagingError> {
    if rect.w == 0 || rect.h == 0 || rect.x + rect.w > plane.width || rect.y + rect.h > plane.height {
        return Err(ImagingError::RectOutOfBounds {
            rect,
            width: plane.width,
            height: plane.height,
        });
    }
    let mut samples = Vec::with_capacity(rect.w * rect.h);
    for y in rect.y..rect.y + rect.h {
        let row = y * plane.width;
        samples.extend_from_slice(&plane.data[row + rect.x..row + rect.x + rect.w]);
    }
    Ok(RegionStats::from_samples(&samples))
}

/// Bilinear resize with half-pixel-centre sampling. Interpolated values are
/// rounded half up, so a 2x2 `0/255` checkerboard shrinks to 128.
///
/// Panics if `w` or `h` is zero.
pub fn resize_bilinear(img: &ImageBuffer, w: usize, h: usize) -> ImageBuffer {
    assert!(w > 0 && h > 0, "resize to zero size");
    if w == img.width && h == img.height {
        return img.clone();
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(w, img.width);
    let ys = axis(h, img.height);
    let mut data = Vec::with_capacity(w * h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = img.pixel(x0, y0);
            let p10 = img.pixel(x1, y0);
            let p01 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer {
        width: w,
        height: h,
        data,
    }
}
