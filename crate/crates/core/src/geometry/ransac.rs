use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::similarity::{fit_similarity, SimilarityTransform};
use crate::error::{Error, Result};
use crate::landmarks::Point;

/// Points per hypothesis; exact for four degrees of freedom.
pub const MINIMAL_SAMPLE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub threshold_px: f64,
    pub max_trials: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 3.0,
            max_trials: 2000,
            min_inliers: 8,
            seed: 0,
        }
    }
}

impl RansacConfig {
    /// Threshold set to 1% of the image diagonal.
    pub fn for_image(width: u32, height: u32) -> Self {
        Self {
            threshold_px: 0.01 * (width as f64).hypot(height as f64),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacResult {
    pub transform: SimilarityTransform,
    pub inlier_mask: Vec<bool>,
    pub num_trials: usize,
}

impl RansacResult {
    pub fn num_inliers(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

struct Hypothesis {
    inliers: usize,
    cost: f64,
    trial: usize,
    transform: SimilarityTransform,
}

fn score(t: &SimilarityTransform, src: &[Point], dst: &[Point], threshold: f64) -> (usize, f64) {
    let mut count = 0;
    let mut cost = 0.0;
    for r in t.residuals(src, dst) {
        if r <= threshold {
            count += 1;
            cost += r * r;
        } else {
            cost += threshold * threshold;
        }
    }
    (count, cost)
}

fn mask_of(t: &SimilarityTransform, src: &[Point], dst: &[Point], threshold: f64) -> Vec<bool> {
    t.residuals(src, dst).into_iter().map(|r| r <= threshold).collect()
}

fn subset(points: &[Point], mask: &[bool]) -> Vec<Point> {
    points
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect()
}

/// Sample index pair for a trial; depends only on `(seed, trial)`.
fn trial_sample(seed: u64, trial: usize, n: usize) -> [usize; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let a = rng.gen_range(0..n);
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    [a, b]
}

/// Robust similarity estimate from minimal two-point samples. The hypothesis
/// with the most inliers wins (ties broken by truncated squared cost, then
/// trial index); the result is refit on its inliers until the inlier set is
/// stable.
pub fn ransac_similarity(src: &[Point], dst: &[Point], config: &RansacConfig) -> Result<RansacResult> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::SizeMismatch(format!(
            "{n} source vs {} destination points",
            dst.len()
        )));
    }
    if n < MINIMAL_SAMPLE {
        return Err(Error::InvalidArgument(format!(
            "RANSAC needs at least {MINIMAL_SAMPLE} correspondences, got {n}"
        )));
    }
    if !(config.threshold_px > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive, got {}",
            config.threshold_px
        )));
    }
    if config.max_trials == 0 {
        return Err(Error::InvalidArgument("max_trials must be positive".into()));
    }
    let threshold = config.threshold_px;

    let best = (0..config.max_trials)
        .into_par_iter()
        .filter_map(|trial| {
            let [i, j] = trial_sample(config.seed, trial, n);
            let t = fit_similarity(&[src[i], src[j]], &[dst[i], dst[j]]).ok()?;
            let (inliers, cost) = score(&t, src, dst, threshold);
            Some(Hypothesis {
                inliers,
                cost,
                trial,
                transform: t,
            })
        })
        .reduce_with(|a, b| {
            let a_wins = a.inliers > b.inliers
                || (a.inliers == b.inliers
                    && (a.cost < b.cost || (a.cost == b.cost && a.trial < b.trial)));
            if a_wins {
                a
            } else {
                b
            }
        });
    let best = best.ok_or(Error::RegistrationFailed {
        best: 0,
        required: config.min_inliers,
    })?;
    let required = config.min_inliers.max(MINIMAL_SAMPLE);
    if best.inliers < required {
        return Err(Error::RegistrationFailed {
            best: best.inliers,
            required,
        });
    }

    let mut mask = mask_of(&best.transform, src, dst, threshold);
    let mut transform = best.transform;
    for _ in 0..20 {
        let refit = fit_similarity(&subset(src, &mask), &subset(dst, &mask))?;
        let next = mask_of(&refit, src, dst, threshold);
        let count = next.iter().filter(|&&b| b).count();
        if count < required {
            break;
        }
        transform = refit;
        if next == mask {
            break;
        }
        mask = next;
    }
    let mask = mask_of(&transform, src, dst, threshold);
    let inliers = mask.iter().filter(|&&b| b).count();
    if inliers < required {
        return Err(Error::RegistrationFailed {
            best: inliers,
            required,
        });
    }
    Ok(RansacResult {
        transform,
        inlier_mask: mask,
        num_trials: config.max_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(n: usize) -> Vec<Point> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 2.399;
                Point::new(500.0 + 200.0 * a.cos() * (1.0 + (i % 3) as f64 * 0.2), 480.0 + 180.0 * a.sin())
            })
            .collect()
    }

    #[test]
    fn clean_data_gives_full_mask() {
        let truth = SimilarityTransform::new(0.3, 0.8, 40.0, -25.0);
        let src = points(41);
        let dst: Vec<Point> = src.iter().map(|p| truth.apply(*p)).collect();
        for seed in [0, 1, 99] {
            let r = ransac_similarity(&src, &dst, &RansacConfig { seed, ..Default::default() }).unwrap();
            assert_eq!(r.num_inliers(), 41);
            assert!((r.transform.scale - 0.8).abs() < 1e-4);
            assert!((r.transform.angle - 0.3).abs() < 1e-4);
            assert!((r.transform.tx - 40.0).abs() < 1e-4 && (r.transform.ty + 25.0).abs() < 1e-4);
        }
    }

    #[test]
    fn planted_outliers_are_rejected() {
        let truth = SimilarityTransform::new(-0.2, 1.1, 12.0, 7.0);
        let src = points(41);
        let mut dst: Vec<Point> = src.iter().map(|p| truth.apply(*p)).collect();
        let outliers: Vec<usize> = (0..8).map(|k| k * 5 + 1).collect();
        for (k, &i) in outliers.iter().enumerate() {
            let a = k as f64;
            dst[i] = dst[i].offset(60.0 * a.cos() + 50.0, 70.0 * a.sin() - 55.0);
        }
        let cfg = RansacConfig { threshold_px: 3.0, seed: 4, ..Default::default() };
        let r = ransac_similarity(&src, &dst, &cfg).unwrap();
        for i in 0..41 {
            assert_eq!(r.inlier_mask[i], !outliers.contains(&i), "index {i}");
        }
        assert!((r.transform.scale - 1.1).abs() < 1e-3);
        assert!((r.transform.angle + 0.2).abs() < 1e-3);
    }

    #[test]
    fn deterministic_given_seed() {
        let src = points(41);
        let dst: Vec<Point> = src
            .iter()
            .enumerate()
            .map(|(i, p)| p.offset((i as f64).sin() * 4.0, (i as f64).cos() * 4.0))
            .collect();
        let cfg = RansacConfig { seed: 17, ..Default::default() };
        let a = ransac_similarity(&src, &dst, &cfg).unwrap();
        let b = ransac_similarity(&src, &dst, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn preconditions() {
        let p = points(1);
        assert!(matches!(
            ransac_similarity(&p, &p, &RansacConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
        let p = points(5);
        let bad = RansacConfig { threshold_px: 0.0, ..Default::default() };
        assert!(ransac_similarity(&p, &p, &bad).is_err());
        // only 5 points: fewer than the default minimum support
        assert!(matches!(
            ransac_similarity(&p, &p, &RansacConfig::default()),
            Err(Error::RegistrationFailed { .. })
        ));
    }

    #[test]
    fn sample_pairs_are_distinct() {
        for t in 0..500 {
            let [a, b] = trial_sample(3, t, 41);
            assert_ne!(a, b);
            assert!(a < 41 && b < 41);
        }
    }
}
