//! Planar floating point images and the resampling primitives shared by the
//! pipeline.
//!
//! Pixel `(x, y)` is the sample at continuous coordinate `(x, y)`; scaling by
//! `s` maps coordinate `X` to `X * s` with no half-pixel offset.

use std::path::Path;

use image::{DynamicImage, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::landmarks::Point;

/// Behaviour when sampling outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    Replicate,
    Zero,
}

/// A `channels x height x width` image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let mut img = Image::new(width, height, value.len());
        for (c, &v) in value.iter().enumerate() {
            img.plane_mut(c).fill(v);
        }
        img
    }

    pub fn from_planes(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::SizeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(w, h, 3);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, x as usize, y as usize, px.0[c] as f32 / 255.0);
            }
        }
        out
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        Image::from_rgb8(&img.to_rgb8())
    }

    /// Quantize to 8-bit RGB. Single-channel images are replicated.
    pub fn to_rgb8(&self) -> RgbImage {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let ch = |c: usize| q(self.get(c.min(self.channels - 1), x, y));
            Rgb([ch(0), ch(1), ch(2)])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Image::from_dynamic(&img))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Bilinear sample of channel `c` at a continuous position.
    pub fn sample(&self, c: usize, x: f64, y: f64, border: Border) -> f32 {
        let plane = self.plane(c);
        let (w, h) = (self.width as i64, self.height as i64);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |xi: i64, yi: i64| -> f32 {
            match border {
                Border::Replicate => {
                    let xi = xi.clamp(0, w - 1) as usize;
                    let yi = yi.clamp(0, h - 1) as usize;
                    plane[yi * self.width + xi]
                }
                Border::Zero => {
                    if xi < 0 || yi < 0 || xi >= w || yi >= h {
                        0.0
                    } else {
                        plane[yi as usize * self.width + xi as usize]
                    }
                }
            }
        };
        if fx == 0.0 && fy == 0.0 {
            return at(x0, y0);
        }
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Backward-map every output pixel through `source_of` with bilinear sampling.
    pub fn warp<F>(&self, out_w: usize, out_h: usize, border: Border, source_of: F) -> Image
    where
        F: Fn(Point) -> Point,
    {
        let mut out = Image::new(out_w, out_h, self.channels);
        for y in 0..out_h {
            for x in 0..out_w {
                let s = source_of(Point::new(x as f64, y as f64));
                for c in 0..self.channels {
                    out.set(c, x, y, self.sample(c, s.x, s.y, border));
                }
            }
        }
        out
    }

    /// Separable resampling where output coordinate `X` reads input
    /// coordinate `X / scale`. Downscaling uses a widened triangle filter.
    pub fn resize_scaled(&self, out_w: usize, out_h: usize, scale_x: f64, scale_y: f64) -> Image {
        let xs: Vec<f64> = (0..out_w).map(|x| x as f64 / scale_x).collect();
        let ys: Vec<f64> = (0..out_h).map(|y| y as f64 / scale_y).collect();
        let wx = ResampleWeights::triangle(self.width, &xs, (1.0 / scale_x).max(1.0));
        let wy = ResampleWeights::triangle(self.height, &ys, (1.0 / scale_y).max(1.0));
        self.resample_separable(&wx, &wy)
    }

    pub fn resample_separable(&self, wx: &ResampleWeights, wy: &ResampleWeights) -> Image {
        let (out_w, out_h) = (wx.len(), wy.len());
        let mut out = Image::new(out_w, out_h, self.channels);
        let mut tmp = vec![0.0f32; self.height * out_w];
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..self.height {
                let row = &plane[y * self.width..(y + 1) * self.width];
                for x in 0..out_w {
                    tmp[y * out_w + x] = wx.apply(x, |k| row[k]);
                }
            }
            let dst = out.plane_mut(c);
            for y in 0..out_h {
                for x in 0..out_w {
                    dst[y * out_w + x] = wy.apply(y, |k| tmp[k * out_w + x]);
                }
            }
        }
        out
    }

    /// Mirror horizontally.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, self.width - 1 - x, y, self.get(c, x, y));
                }
            }
        }
        out
    }

    /// Place the image on a zero canvas at integer offset.
    pub fn pad(&self, out_w: usize, out_h: usize, off_x: usize, off_y: usize) -> Image {
        let mut out = Image::new(out_w, out_h, self.channels);
        for c in 0..self.channels {
            for y in 0..self.height.min(out_h.saturating_sub(off_y)) {
                for x in 0..self.width.min(out_w.saturating_sub(off_x)) {
                    out.set(c, x + off_x, y + off_y, self.get(c, x, y));
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Sparse 1-D interpolation weights: each output index reads a contiguous
/// run of input indices (already clamped to the valid range).
#[derive(Debug, Clone)]
pub struct ResampleWeights {
    src_len: usize,
    entries: Vec<(Vec<usize>, Vec<f32>)>,
}

impl ResampleWeights {
    /// Triangle (hat) kernel of the given radius centered at each position;
    /// radius 1 is bilinear interpolation. Out-of-range taps are clamped to
    /// the border sample.
    pub fn triangle(src_len: usize, positions: &[f64], radius: f64) -> Self {
        let entries = positions
            .iter()
            .map(|&pos| {
                let lo = (pos - radius).floor() as i64;
                let hi = (pos + radius).ceil() as i64;
                let mut idx = Vec::new();
                let mut wts = Vec::new();
                let mut total = 0.0;
                for k in lo..=hi {
                    let w = 1.0 - (k as f64 - pos).abs() / radius;
                    if w <= 0.0 {
                        continue;
                    }
                    let kc = k.clamp(0, src_len as i64 - 1) as usize;
                    total += w;
                    match idx.iter().position(|&i| i == kc) {
                        Some(j) => wts[j] += w,
                        None => {
                            idx.push(kc);
                            wts.push(w);
                        }
                    }
                }
                let wts = wts.into_iter().map(|w| (w / total) as f32).collect();
                (idx, wts)
            })
            .collect();
        Self { src_len, entries }
    }

    /// Bilinear weights at arbitrary positions.
    pub fn bilinear(src_len: usize, positions: &[f64]) -> Self {
        Self::triangle(src_len, positions, 1.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    #[inline]
    fn apply(&self, out: usize, read: impl Fn(usize) -> f32) -> f32 {
        let (idx, wts) = &self.entries[out];
        idx.iter().zip(wts).map(|(&k, &w)| read(k) * w).sum()
    }

    /// Dense `len x src_len` row-major matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.len() * self.src_len];
        for (r, (idx, wts)) in self.entries.iter().enumerate() {
            for (&k, &w) in idx.iter().zip(wts) {
                m[r * self.src_len + k] += w as f64;
            }
        }
        m
    }

    /// Smallest and one-past-largest source index touched.
    pub fn support(&self) -> (usize, usize) {
        let lo = self
            .entries
            .iter()
            .flat_map(|(i, _)| i.iter().copied())
            .min()
            .unwrap_or(0);
        let hi = self
            .entries
            .iter()
            .flat_map(|(i, _)| i.iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        (lo, hi)
    }
}

/// Product of two dense row-major matrices `a (n x k)` and `b (k x m)`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i * m + j] += av * b[l * m + j];
            }
        }
    }
    out
}

/// Centered zero padding to a square followed by uniform scaling to
/// `size x size`: `X' = (X + offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SquareFit {
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale: f64,
}

impl SquareFit {
    pub fn for_size(width: usize, height: usize, size: usize) -> Self {
        let side = width.max(height);
        Self {
            offset_x: ((side - width) / 2) as f64,
            offset_y: ((side - height) / 2) as f64,
            scale: size as f64 / side as f64,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.offset_x == 0.0 && self.offset_y == 0.0 && self.scale == 1.0
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new((p.x + self.offset_x) * self.scale, (p.y + self.offset_y) * self.scale)
    }

    pub fn invert(&self, p: Point) -> Point {
        Point::new(p.x / self.scale - self.offset_x, p.y / self.scale - self.offset_y)
    }
}

/// Pad `image` to a centered square and rescale it to `size x size`.
pub fn fit_square(image: &Image, size: usize) -> (Image, SquareFit) {
    let fit = SquareFit::for_size(image.width(), image.height(), size);
    if fit.is_identity() {
        return (image.clone(), fit);
    }
    let side = image.width().max(image.height());
    let padded = image.pad(side, side, fit.offset_x as usize, fit.offset_y as usize);
    (padded.resize_scaled(size, size, fit.scale, fit.scale), fit)
}
