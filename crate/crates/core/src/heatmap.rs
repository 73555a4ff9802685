//! Heatmap stacks, spatial softargmax coordinate extraction and its gradient,
//! and Gaussian rendering for diagnostics.
//!
//! Cell `(row i, col j)` has coordinates `(x = j, y = i)`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::landmarks::Point;

/// Default softmax temperature.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// `C` score maps of `H x W` cells stored channel-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl HeatmapStack {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "heatmap shape must be nonzero, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::SizeMismatch(format!(
                "{} values for shape {channels}x{height}x{width}",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn from_f32(channels: usize, height: usize, width: usize, values: &[f32]) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            values.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.values[(c * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        self.values[(c * self.height + row) * self.width + col] = v;
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "non-finite heatmap value at flat index {i}"
            ))),
            None => Ok(()),
        }
    }

    /// Serialize as `C, H, W` (u32 little endian) followed by row-major f32 values.
    pub fn write_blob<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for d in [self.channels, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_blob<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)
            .map_err(|e| Error::io("<heatmap blob>", e))?;
        let dim = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        let (c, h, w) = (dim(0), dim(1), dim(2));
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)
            .map_err(|e| Error::io("<heatmap blob>", e))?;
        if raw.len() != c * h * w * 4 {
            return Err(Error::SizeMismatch(format!(
                "blob declares {c}x{h}x{w} but holds {} bytes",
                raw.len()
            )));
        }
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        HeatmapStack::new(c, h, w, values)
    }

    pub fn save_blob(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_blob(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_blob(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_blob(std::io::BufReader::new(file))
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// Softmax probabilities of one channel, numerically stabilized.
fn channel_probabilities(channel: &[f64], temperature: f64) -> Vec<f64> {
    let max = channel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = channel
        .iter()
        .map(|&v| ((v - max) * temperature).exp())
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

fn expectation(p: &[f64], width: usize) -> Point {
    let (mut x, mut y) = (0.0, 0.0);
    for (k, &pk) in p.iter().enumerate() {
        x += pk * (k % width) as f64;
        y += pk * (k / width) as f64;
    }
    Point::new(x, y)
}

/// Expected grid coordinate of each channel under `softmax(temperature * H)`.
pub fn spatial_softargmax(stack: &HeatmapStack, temperature: f64) -> Result<Vec<Point>> {
    check_temperature(temperature)?;
    stack.check_finite()?;
    Ok((0..stack.channels)
        .map(|c| expectation(&channel_probabilities(stack.channel(c), temperature), stack.width))
        .collect())
}

/// Vector-Jacobian product of [`spatial_softargmax`]: given upstream
/// gradients `(dL/dx_c, dL/dy_c)` per channel, returns `dL/dH`.
///
/// `d x_c / d H_k = T p_k (x_k - x_c)`, likewise for `y`.
pub fn softargmax_backward(
    stack: &HeatmapStack,
    temperature: f64,
    upstream: &[Point],
) -> Result<HeatmapStack> {
    check_temperature(temperature)?;
    stack.check_finite()?;
    if upstream.len() != stack.channels {
        return Err(Error::SizeMismatch(format!(
            "{} upstream gradients for {} channels",
            upstream.len(),
            stack.channels
        )));
    }
    let mut grad = HeatmapStack::zeros(stack.channels, stack.height, stack.width);
    for (c, g) in upstream.iter().enumerate() {
        let p = channel_probabilities(stack.channel(c), temperature);
        let mean = expectation(&p, stack.width);
        let out = grad.channel_mut(c);
        for (k, &pk) in p.iter().enumerate() {
            let dx = (k % stack.width) as f64 - mean.x;
            let dy = (k / stack.width) as f64 - mean.y;
            out[k] = temperature * pk * (g.x * dx + g.y * dy);
        }
    }
    Ok(grad)
}

/// Index of the maximum cell of a channel as `(x, y)`.
pub fn argmax(stack: &HeatmapStack, channel: usize) -> Point {
    let ch = stack.channel(channel);
    let k = ch
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    Point::new((k % stack.width) as f64, (k / stack.width) as f64)
}

/// Render one isotropic Gaussian per point: `exp(-|q - p|^2 / (2 sigma^2))`.
pub fn render_gaussian(points: &[Point], sigma: f64, height: usize, width: usize) -> Result<HeatmapStack> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to render".into()));
    }
    let mut stack = HeatmapStack::zeros(points.len(), height, width);
    let denom = 2.0 * sigma * sigma;
    for (c, p) in points.iter().enumerate() {
        let ch = stack.channel_mut(c);
        for row in 0..height {
            let dy = row as f64 - p.y;
            for col in 0..width {
                let dx = col as f64 - p.x;
                ch[row * width + col] = (-(dx * dx + dy * dy) / denom).exp();
            }
        }
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double loop, no stabilization.
    fn oracle(stack: &HeatmapStack, t: f64) -> Vec<Point> {
        (0..stack.channels())
            .map(|c| {
                let (mut z, mut sx, mut sy) = (0.0, 0.0, 0.0);
                for i in 0..stack.height() {
                    for j in 0..stack.width() {
                        let e = (t * stack.get(c, i, j)).exp();
                        z += e;
                        sx += e * j as f64;
                        sy += e * i as f64;
                    }
                }
                Point::new(sx / z, sy / z)
            })
            .collect()
    }

    fn random_stack(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> HeatmapStack {
        let v = (0..c * h * w).map(|_| rng.gen_range(-3.0..3.0)).collect();
        HeatmapStack::new(c, h, w, v).unwrap()
    }

    #[test]
    fn near_delta_collapses_to_peak() {
        let mut s = HeatmapStack::zeros(1, 16, 32);
        s.set(0, 5, 10, 50.0);
        let p = spatial_softargmax(&s, 1.0).unwrap()[0];
        assert!((p.x - 10.0).abs() < 1e-3 && (p.y - 5.0).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn constant_map_gives_grid_centroid() {
        let s = HeatmapStack::new(1, 256, 256, vec![0.7; 256 * 256]).unwrap();
        let p = spatial_softargmax(&s, 1.0).unwrap()[0];
        assert!((p.x - 127.5).abs() < 1e-9 && (p.y - 127.5).abs() < 1e-9);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_stack(&mut rng, 3, 8, 8);
            let t = rng.gen_range(0.2..3.0);
            for (a, b) in spatial_softargmax(&s, t).unwrap().iter().zip(oracle(&s, t)) {
                assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = HeatmapStack::zeros(1, 4, 4);
        assert!(spatial_softargmax(&s, 0.0).is_err());
        assert!(spatial_softargmax(&s, -1.0).is_err());
        let mut bad = s.clone();
        bad.set(0, 1, 1, f64::NAN);
        assert!(spatial_softargmax(&bad, 1.0).is_err());
        assert!(render_gaussian(&[Point::new(1.0, 1.0)], 0.0, 4, 4).is_err());
        assert!(HeatmapStack::new(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_stack(&mut rng, 2, 8, 8);
        let up = [Point::new(0.3, -1.2), Point::new(-0.7, 0.4)];
        let t = 1.3;
        let grad = softargmax_backward(&s, t, &up).unwrap();
        let objective = |st: &HeatmapStack| -> f64 {
            spatial_softargmax(st, t)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(p, g)| p.x * g.x + p.y * g.y)
                .sum()
        };
        let h = 1e-4;
        for k in 0..s.values().len() {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus.values[k] += h;
            minus.values[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let an = grad.values()[k];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "{k}: {fd} vs {an}");
        }
    }

    #[test]
    fn gaussian_peak_at_mean() {
        let s = render_gaussian(&[Point::new(10.0, 5.0)], 1.0, 12, 20).unwrap();
        assert_eq!(argmax(&s, 0), Point::new(10.0, 5.0));
        assert!((s.get(0, 5, 10) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wide_gaussian_softargmax_near_centroid() {
        let s = render_gaussian(&[Point::new(3.0, 20.0)], 1e4, 32, 32).unwrap();
        let p = spatial_softargmax(&s, 1.0).unwrap()[0];
        assert!((p.x - 15.5).abs() < 1e-3 && (p.y - 15.5).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn render_then_extract_recovers_interior_point() {
        let pts = [Point::new(20.3, 11.7), Point::new(40.0, 33.25)];
        let s = render_gaussian(&pts, 2.0, 64, 64).unwrap();
        let got = spatial_softargmax(&s, 50.0).unwrap();
        for (a, b) in got.iter().zip(&pts) {
            assert!(a.distance(b) < 0.5, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn high_temperature_converges_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_stack(&mut rng, 1, 8, 8);
        let am = argmax(&s, 0);
        let mut last = f64::INFINITY;
        for t in [1.0, 10.0, 100.0, 1000.0] {
            let d = spatial_softargmax(&s, t).unwrap()[0].distance(&am);
            assert!(d <= last + 1e-12);
            last = d;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn blob_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_stack(&mut rng, 3, 4, 5);
        let mut buf = Vec::new();
        s.write_blob(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 60 * 4);
        assert_eq!(&buf[..4], &3u32.to_le_bytes());
        let back = HeatmapStack::read_blob(&buf[..]).unwrap();
        for (a, b) in back.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(HeatmapStack::read_blob(&buf[..20]).is_err());
    }

    proptest! {
        #[test]
        fn circular_shift_moves_output(dx in -6i64..=6, dy in -6i64..=6, px in 20usize..28, py in 20usize..28) {
            let (h, w) = (48usize, 48usize);
            let base = render_gaussian(&[Point::new(px as f64, py as f64)], 1.5, h, w).unwrap();
            let mut shifted = HeatmapStack::zeros(1, h, w);
            for i in 0..h {
                for j in 0..w {
                    let si = (i as i64 + dy).rem_euclid(h as i64) as usize;
                    let sj = (j as i64 + dx).rem_euclid(w as i64) as usize;
                    shifted.set(0, si, sj, base.get(0, i, j));
                }
            }
            let a = spatial_softargmax(&base, 20.0).unwrap()[0];
            let b = spatial_softargmax(&shifted, 20.0).unwrap()[0];
            prop_assert!((b.x - a.x - dx as f64).abs() < 1e-3);
            prop_assert!((b.y - a.y - dy as f64).abs() < 1e-3);
        }
    }
}
