//! Procedural faces for fixtures and toy datasets: a template 68-point
//! layout and a renderer that draws recognizable features at the landmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{AugmentConfig, AugmentPlan, SimilarityTransform};
use crate::landmarks::{LandmarkSet, Point};
use crate::raster::Image;

/// Template landmarks in face units (roughly `[-1, 1]`, y down).
fn template_units() -> Vec<Point> {
    let mut pts = Vec::with_capacity(68);
    for k in 0..17 {
        let t = k as f64 * std::f64::consts::PI / 16.0;
        pts.push(Point::new(-t.cos(), -0.35 + 1.3 * t.sin()));
    }
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let u = k as f64 / 4.0;
            let x = if side < 0.0 { -0.8 + 0.6 * u } else { 0.2 + 0.6 * u };
            let arc = (u * std::f64::consts::PI).sin();
            pts.push(Point::new(x, -0.6 - 0.1 * arc));
        }
    }
    for k in 0..4 {
        pts.push(Point::new(0.0, -0.45 + 0.13 * k as f64));
    }
    for k in 0..5 {
        let u = k as f64 / 4.0 - 0.5;
        pts.push(Point::new(0.36 * u, 0.08 + 0.05 * (1.0 - 4.0 * u * u)));
    }
    // both eyes start at their left-most corner in image space
    let eye = |cx: f64| -> Vec<Point> {
        let (w, h, cy) = (0.17, 0.07, -0.36);
        let ring = [
            Point::new(cx - w, cy),
            Point::new(cx - w / 3.0, cy - h),
            Point::new(cx + w / 3.0, cy - h),
            Point::new(cx + w, cy),
            Point::new(cx + w / 3.0, cy + h),
            Point::new(cx - w / 3.0, cy + h),
        ];
        ring.to_vec()
    };
    pts.extend(eye(-0.45));
    pts.extend(eye(0.45));
    let (mcy, mw) = (0.45, 0.38);
    let outer_top = [-1.0, -0.6, -0.2, 0.0, 0.2, 0.6, 1.0];
    for (i, &u) in outer_top.iter().enumerate() {
        let lift = if i == 0 || i == 6 { 0.0 } else if i == 3 { 0.09 } else { 0.12 };
        pts.push(Point::new(u * mw, mcy - lift));
    }
    for &u in &[0.6, 0.3, 0.0, -0.3, -0.6] {
        pts.push(Point::new(u * mw, mcy + 0.16 * (1.0 - 0.5 * u * u)));
    }
    let iw = mw * 0.8;
    pts.push(Point::new(-iw, mcy));
    for &u in &[-0.4, 0.0, 0.4] {
        pts.push(Point::new(u * iw, mcy - 0.03));
    }
    pts.push(Point::new(iw, mcy));
    for &u in &[0.4, 0.0, -0.4] {
        pts.push(Point::new(u * iw, mcy + 0.04));
    }
    debug_assert_eq!(pts.len(), 68);
    pts
}

/// Frontal template landmarks for a square image of side `size`.
pub fn template_landmarks(size: u32) -> LandmarkSet {
    let s = size as f64;
    let (cx, cy, r) = (0.5 * s, 0.47 * s, 0.28 * s);
    let pts = template_units()
        .into_iter()
        .map(|p| Point::new(cx + p.x * r, cy + p.y * r))
        .collect();
    LandmarkSet::new(pts, size, size).expect("template is valid")
}

/// Color scheme for a rendered face.
#[derive(Debug, Clone)]
pub struct FaceStyle {
    pub background: [f32; 3],
    pub skin: [f32; 3],
    pub line: [f32; 3],
    pub lips: [f32; 3],
    pub iris: [f32; 3],
    pub noise: f32,
}

impl FaceStyle {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut c = |lo: f32, hi: f32| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
        FaceStyle {
            background: c(0.05, 0.4),
            skin: c(0.6, 0.9),
            line: c(0.0, 0.2),
            lips: c(0.4, 0.7),
            iris: c(0.1, 0.4),
            noise: 0.03,
        }
    }
}

impl Default for FaceStyle {
    fn default() -> Self {
        FaceStyle {
            background: [0.2, 0.25, 0.3],
            skin: [0.85, 0.7, 0.6],
            line: [0.1, 0.05, 0.05],
            lips: [0.7, 0.25, 0.3],
            iris: [0.2, 0.3, 0.5],
            noise: 0.0,
        }
    }
}

fn blend(img: &mut Image, x: usize, y: usize, color: &[f32; 3], alpha: f32) {
    for (c, &v) in color.iter().enumerate() {
        let old = img.get(c, x, y);
        img.set(c, x, y, old * (1.0 - alpha) + v * alpha);
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
    };
    p.distance(&Point::new(a.x + t * vx, a.y + t * vy))
}

/// Antialiased stroke of a polyline with the given half-width.
pub fn stroke(img: &mut Image, pts: &[Point], closed: bool, radius: f64, color: &[f32; 3]) {
    let n = pts.len();
    let segs = if closed { n } else { n.saturating_sub(1) };
    let (w, h) = (img.width() as i64, img.height() as i64);
    let pad = radius + 1.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let xa = ((x0 - pad).floor() as i64).clamp(0, w);
    let xb = ((x1 + pad).ceil() as i64).clamp(0, w);
    let ya = ((y0 - pad).floor() as i64).clamp(0, h);
    let yb = ((y1 + pad).ceil() as i64).clamp(0, h);
    for y in ya..yb {
        for x in xa..xb {
            let q = Point::new(x as f64, y as f64);
            let d = (0..segs)
                .map(|i| segment_distance(q, pts[i], pts[(i + 1) % n]))
                .fold(f64::MAX, f64::min);
            let alpha = (radius + 0.5 - d).clamp(0.0, 1.0) as f32;
            if alpha > 0.0 {
                blend(img, x as usize, y as usize, color, alpha);
            }
        }
    }
}

fn inside(q: Point, poly: &[Point]) -> bool {
    let mut hit = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > q.y) != (b.y > q.y) {
            let x = a.x + (q.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if q.x < x {
                hit = !hit;
            }
        }
    }
    hit
}

/// Even-odd polygon fill.
pub fn fill(img: &mut Image, poly: &[Point], color: &[f32; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = poly.iter().map(|p| p.x).fold(f64::MAX, f64::min).floor() as i64;
    let x1 = poly.iter().map(|p| p.x).fold(f64::MIN, f64::max).ceil() as i64;
    let y0 = poly.iter().map(|p| p.y).fold(f64::MAX, f64::min).floor() as i64;
    let y1 = poly.iter().map(|p| p.y).fold(f64::MIN, f64::max).ceil() as i64;
    for y in y0.clamp(0, h)..(y1 + 1).clamp(0, h) {
        for x in x0.clamp(0, w)..(x1 + 1).clamp(0, w) {
            if inside(Point::new(x as f64, y as f64), poly) {
                blend(img, x as usize, y as usize, color, 1.0);
            }
        }
    }
}

pub fn disc(img: &mut Image, center: Point, radius: f64, color: &[f32; 3]) {
    stroke(img, &[center, center], false, radius, color);
}

/// Draw a face whose features sit at the given landmarks.
pub fn render_face(landmarks: &LandmarkSet, style: &FaceStyle, seed: u64) -> Image {
    let (w, h) = (landmarks.width() as usize, landmarks.height() as usize);
    let mut img = Image::filled(w, h, &style.background);
    let p = landmarks.points();
    let scale = (p[16].x - p[0].x).abs().max(8.0) / 2.0;
    let line_r = (scale * 0.012).max(0.6);

    // face: jaw plus an arc over the forehead through the brows
    let mut outline: Vec<Point> = p[0..17].to_vec();
    let top = p[17..27].iter().map(|q| q.y).fold(f64::MAX, f64::min);
    let (cx, span) = ((p[0].x + p[16].x) / 2.0, (p[16].x - p[0].x) / 2.0);
    let base = (p[0].y + p[16].y) / 2.0;
    let lift = (base - top) * 1.6;
    for k in 1..16 {
        let t = k as f64 * std::f64::consts::PI / 16.0;
        outline.push(Point::new(cx + span * t.cos(), base - lift * t.sin()));
    }
    fill(&mut img, &outline, &style.skin);
    stroke(&mut img, &p[0..17], false, line_r * 1.5, &style.line);

    stroke(&mut img, &p[17..22], false, line_r * 2.5, &style.line);
    stroke(&mut img, &p[22..27], false, line_r * 2.5, &style.line);

    stroke(&mut img, &p[27..31], false, line_r, &style.line);
    stroke(&mut img, &p[31..36], false, line_r * 1.2, &style.line);
    for q in [p[31], p[35]] {
        disc(&mut img, q, line_r * 1.8, &style.line);
    }

    for eye in [&p[36..42], &p[42..48]] {
        fill(&mut img, eye, &[0.95, 0.95, 0.92]);
        let c = crate::landmarks::centroid(eye);
        let rad = (eye[1].distance(&eye[5]) * 0.45).max(1.0);
        disc(&mut img, c, rad, &style.iris);
        stroke(&mut img, eye, true, line_r, &style.line);
    }

    fill(&mut img, &p[48..60], &style.lips);
    let inner: Vec<Point> = p[60..68].to_vec();
    fill(&mut img, &inner, &[style.lips[0] * 0.4, style.lips[1] * 0.4, style.lips[2] * 0.4]);
    stroke(&mut img, &p[48..60], true, line_r, &style.line);

    if style.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = img.data().len();
        let data: Vec<f32> = img
            .data()
            .iter()
            .map(|&v| (v + rng.gen_range(-style.noise..style.noise)).clamp(0.0, 1.0))
            .collect();
        img = Image::from_planes(w, h, 3, data).expect("same size");
        debug_assert_eq!(img.data().len(), n);
    }
    img
}

/// Template pose perturbed by a random similarity and a random
/// group-level deformation.
pub fn random_landmarks(size: u32, rng: &mut impl Rng) -> LandmarkSet {
    let base = template_landmarks(size);
    let s = size as f64;
    let c = Point::new(s / 2.0, s / 2.0);
    let angle = rng.gen_range(-8f64..8.0).to_radians();
    let scale = rng.gen_range(0.9..1.1);
    let shift = Point::new(rng.gen_range(-0.04..0.04) * s, rng.gen_range(-0.04..0.04) * s);
    let rot = SimilarityTransform::new(angle, scale, 0.0, 0.0);
    let posed = base
        .map_points(size, size, |p| {
            let q = rot.apply(Point::new(p.x - c.x, p.y - c.y));
            Point::new(q.x + c.x + shift.x, q.y + c.y + shift.y)
        })
        .expect("finite");
    let cfg = AugmentConfig::default();
    AugmentPlan::sample(&posed, &cfg, rng)
        .apply(&posed)
        .expect("finite")
}

/// A random rendered face with its ground truth.
pub fn random_face(size: u32, seed: u64) -> (Image, LandmarkSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lm = random_landmarks(size, &mut rng);
    let style = FaceStyle::random(&mut rng);
    (render_face(&lm, &style, seed), lm)
}

/// Image whose red and green channels encode the pixel's own coordinates
/// (`x / size`, `y / size`). Bilinear resampling of it is exact, so any crop
/// reveals where it was taken from.
pub fn coordinate_image(width: usize, height: usize) -> Image {
    let mut img = Image::new(width, height, 3);
    let s = width.max(height) as f32;
    for y in 0..height {
        for x in 0..width {
            img.set(0, x, y, x as f32 / s);
            img.set(1, x, y, y as f32 / s);
            img.set(2, x, y, 0.5);
        }
    }
    img
}
