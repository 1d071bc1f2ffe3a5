//! Image preprocessing: center crop + area resampling, pencil sketches,
//! area-average pyramids and curated training samples.

use alloc::vec;
use alloc::vec::Vec;

use crate::attributes::AttributeSchema;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// Luminance weights for RGB → gray.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
/// Guard term of the dodge division.
pub const DODGE_EPS: f64 = 1e-6;
/// Dodge gain; one 8-bit level of headroom so that rounding in the blur
/// can never pull a uniform input below pure white.
pub const DODGE_GAIN: f64 = 256.0 / 255.0;

/// Row-major `H×W×C` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid!("image dimensions must be positive, got {}x{}x{}", height, width, channels));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!("{}x{}x{} image needs {} values, got {}", height, width, channels, height * width * channels, data.len()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `[0,1]` → `[-1,1]`.
    pub fn to_signed(&self) -> Self {
        self.map(|v| 2.0 * v - 1.0)
    }

    /// `[-1,1]` → `[0,1]`.
    pub fn to_unit(&self) -> Self {
        self.map(|v| (v + 1.0) * 0.5)
    }

    /// Repeats a single channel three times.
    pub fn gray_to_rgb(&self) -> Result<Self> {
        if self.channels != 1 {
            return Err(shape_err!("expected a 1-channel image, got {} channels", self.channels));
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Ok(Self { channels: 3, data, ..*self })
    }

    /// Channel-first `[C, H, W]` tensor.
    pub fn to_chw(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    out[(k * h + y) * w + x] = self.at(y, x, k);
                }
            }
        }
        Tensor::new(&[c, h, w], out).expect("sizes agree")
    }

    /// Inverse of [`to_chw`](Self::to_chw); accepts `[C,H,W]` or `[1,C,H,W]`.
    pub fn from_chw(t: &Tensor) -> Result<Self> {
        let (c, h, w) = match *t.shape() {
            [c, h, w] | [1, c, h, w] => (c, h, w),
            _ => return Err(shape_err!("expected [C,H,W], got {:?}", t.shape())),
        };
        let src = t.data();
        let mut data = vec![0.0; h * w * c];
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(y * w + x) * c + k] = src[(k * h + y) * w + x];
                }
            }
        }
        Self::new(h, w, c, data)
    }

    /// 8-bit quantization of a `[0,1]` image (values clamped, round-half-up).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| libm::floor(v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, channels, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

/// Overlap of `[a0, a1)` with `[b0, b1)`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Per-output-index source spans and weights for area resampling of `n_in`
/// samples starting at `offset` onto `n_out` samples covering `span`.
fn area_taps(offset: usize, span: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let step = span as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * step;
            let hi = lo + step;
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(span);
            (first..last)
                .filter_map(|i| {
                    let w = overlap(lo, hi, i as f64, i as f64 + 1.0);
                    (w > 0.0).then_some((offset + i, w / step))
                })
                .collect()
        })
        .collect()
}

/// Crops the largest centered square and area-resamples it to `out×out`.
pub fn center_crop_resize(image: &Image, out: usize) -> Result<Image> {
    if image.channels != 3 {
        return Err(shape_err!("center_crop_resize needs a 3-channel image, got {}", image.channels));
    }
    if out == 0 {
        return Err(invalid!("output size must be positive"));
    }
    if image.height * 4 < out || image.width * 4 < out {
        return Err(invalid!("{}x{} image is too small for a {} output", image.height, image.width, out));
    }
    let side = image.height.min(image.width);
    let y0 = (image.height - side) / 2;
    let x0 = (image.width - side) / 2;
    let rows = area_taps(y0, side, out);
    let cols = area_taps(x0, side, out);
    let mut result = Image::filled(out, out, 3, 0.0);
    for (oy, rt) in rows.iter().enumerate() {
        for (ox, ct) in cols.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0.0;
                for &(sy, wy) in rt {
                    for &(sx, wx) in ct {
                        acc += wy * wx * image.at(sy, sx, c);
                    }
                }
                *result.at_mut(oy, ox, c) = acc;
            }
        }
    }
    Ok(result)
}

/// RGB → single-channel luminance.
pub fn luminance(image: &Image) -> Result<Image> {
    if image.channels != 3 {
        return Err(shape_err!("luminance needs a 3-channel image, got {}", image.channels));
    }
    let data = image
        .data
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect();
    Image::new(image.height, image.width, 1, data)
}

/// Normalized 1-D Gaussian taps with radius `max(1, ceil(3σ))`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid!("blur sigma must be positive, got {}", sigma));
    }
    let radius = (libm::ceil(3.0 * sigma) as usize).max(1);
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Separable Gaussian blur of a 1-channel image with clamped edges:
/// horizontal pass, then vertical pass.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image> {
    if image.channels != 1 {
        return Err(shape_err!("gaussian_blur needs a 1-channel image, got {}", image.channels));
    }
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let (h, w) = (image.height as isize, image.width as isize);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut tmp = Image::filled(image.height, image.width, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * image.at(y as usize, clamp(x + i as isize - r, w), 0);
            }
            *tmp.at_mut(y as usize, x as usize, 0) = acc;
        }
    }
    let mut out = Image::filled(image.height, image.width, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp.at(clamp(y + i as isize - r, h), x as usize, 0);
            }
            *out.at_mut(y as usize, x as usize, 0) = acc;
        }
    }
    Ok(out)
}

/// Color dodge of `gray` by `blur` (both 1-channel).
pub fn dodge(gray: f64, blur: f64) -> f64 {
    (DODGE_GAIN * (gray + DODGE_EPS) / (1.0 - blur + DODGE_EPS)).clamp(0.0, 1.0)
}

/// Default blur for a square image of side `resolution`.
pub fn default_blur_sigma(resolution: usize) -> f64 {
    resolution as f64 / 10.0
}

/// Pencil sketch of a `[0,1]` RGB face: luminance, inverted and blurred,
/// then dodged against the luminance. Output is 1-channel in `[0,1]`.
pub fn pencil_sketch(face: &Image, blur_sigma: f64) -> Result<Image> {
    let gray = luminance(face)?;
    let inv = gray.map(|g| 1.0 - g);
    let blur = gaussian_blur(&inv, blur_sigma)?;
    let data = gray.data.iter().zip(&blur.data).map(|(&g, &b)| dodge(g, b)).collect();
    Image::new(face.height, face.width, 1, data)
}

/// Images at increasing resolutions, each an area average of the top level.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePyramid {
    pub levels: Vec<(usize, Image)>,
}

impl ImagePyramid {
    pub fn resolutions(&self) -> Vec<usize> {
        self.levels.iter().map(|(r, _)| *r).collect()
    }

    pub fn level(&self, resolution: usize) -> Option<&Image> {
        self.levels.iter().find(|(r, _)| *r == resolution).map(|(_, i)| i)
    }

    pub fn top(&self) -> &Image {
        &self.levels.last().expect("pyramid has at least one level").1
    }
}

/// Integer-factor box downsampling of a square image.
pub fn area_downsample(image: &Image, out: usize) -> Result<Image> {
    if image.height != image.width {
        return Err(shape_err!("area_downsample needs a square image, got {}x{}", image.height, image.width));
    }
    if out == 0 || image.height % out != 0 {
        return Err(invalid!("scale {} does not divide resolution {}", out, image.height));
    }
    let f = image.height / out;
    let norm = 1.0 / (f * f) as f64;
    let c = image.channels;
    let mut result = Image::filled(out, out, c, 0.0);
    for oy in 0..out {
        for ox in 0..out {
            for k in 0..c {
                let mut acc = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        acc += image.at(oy * f + dy, ox * f + dx, k);
                    }
                }
                *result.at_mut(oy, ox, k) = acc * norm;
            }
        }
    }
    Ok(result)
}

/// Pyramid of `image` at `scales` (ascending, last equal to the image size).
pub fn build_pyramid(image: &Image, scales: &[usize]) -> Result<ImagePyramid> {
    if scales.is_empty() {
        return Err(invalid!("pyramid needs at least one scale"));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid!("scales must be strictly increasing, got {:?}", scales));
    }
    let top = *scales.last().expect("non-empty");
    if image.height != top || image.width != top {
        return Err(shape_err!("top scale {} differs from image size {}x{}", top, image.height, image.width));
    }
    let levels = scales
        .iter()
        .map(|&s| Ok((s, if s == top { image.clone() } else { area_downsample(image, s)? })))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImagePyramid { levels })
}

/// A training-ready sample: face and sketch pyramids in `[-1,1]` plus the
/// curated attribute vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CuratedSample {
    pub face: ImagePyramid,
    /// Three identical channels so that sketches share the face layout.
    pub sketch: ImagePyramid,
    pub y_s: Vec<f64>,
    pub y_f: Vec<f64>,
}

/// Crop/resize a `[0,1]` RGB face to the top scale, derive its sketch
/// (after cropping), build both pyramids and curate the attribute row.
pub fn curate_sample(face: &Image, attributes: &[f64], schema: &AttributeSchema, scales: &[usize]) -> Result<CuratedSample> {
    let top = *scales.last().ok_or_else(|| invalid!("no scales"))?;
    let face = center_crop_resize(face, top)?;
    let sketch = pencil_sketch(&face, default_blur_sigma(top))?.gray_to_rgb()?;
    let (y_s, y_f) = schema.curate(attributes)?;
    Ok(CuratedSample {
        face: build_pyramid(&face.to_signed(), scales)?,
        sketch: build_pyramid(&sketch.to_signed(), scales)?,
        y_s,
        y_f,
    })
}
