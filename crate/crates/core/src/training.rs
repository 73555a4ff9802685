//! Coordinate loss, learning-rate schedule and the two training phases.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use crate::model::{fingerprint, softargmax_tensor, HeatmapNet, ModelBundle, Network, PipelineGeometry};
use crate::pipeline::{downsize, images_to_tensor, run_stages, StageOutput};
use crate::raster::Image;
use crate::region::{sample_padding, Region};

/// Slack allowed when checking that coordinates are normalized.
pub const NORMALIZED_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// First epoch of the linear decay.
    pub decay_start: usize,
    pub batch_size: usize,
}

impl PhaseConfig {
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name}: epochs, batch size and learning rate must be positive"
            )));
        }
        if self.decay_start >= self.epochs {
            return Err(Error::InvalidArgument(format!(
                "{name}: decay start {} must precede the epoch count {}",
                self.decay_start, self.epochs
            )));
        }
        Ok(())
    }

    /// Constant until `decay_start`, then linear down to exactly 0 at the
    /// last epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start {
            return self.learning_rate;
        }
        let last = self.epochs - 1;
        if epoch >= last {
            return 0.0;
        }
        self.learning_rate * (last - epoch) as f64 / (last - self.decay_start) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Weight of the region terms.
    pub lambda: f64,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.25,
            phase1: PhaseConfig {
                epochs: 60,
                learning_rate: 1e-4,
                decay_start: 30,
                batch_size: 16,
            },
            phase2: PhaseConfig {
                epochs: 30,
                learning_rate: 1e-4,
                decay_start: 10,
                batch_size: 4,
            },
            patience: 10,
            seed: 0,
            temperature: crate::heatmap::DEFAULT_TEMPERATURE,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        self.phase1.validate("phase 1")?;
        self.phase2.validate("phase 2")
    }
}

fn check_normalized(points: &[Point]) -> Result<()> {
    for p in points {
        if !p.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        for v in [p.x, p.y] {
            if v.abs() > 0.5 + NORMALIZED_TOLERANCE {
                return Err(Error::Unnormalized { value: v });
            }
        }
    }
    Ok(())
}

fn mean_squared_distance(pred: &[Point], gt: &[Point]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::PointCount {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    check_normalized(pred)?;
    check_normalized(gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Global mean squared error plus `lambda` times the sum of the per-region
/// mean squared errors, on normalized coordinates. Regions are given in
/// [`Region::ALL`] order.
pub fn loss(
    global_pred: &[Point],
    global_gt: &[Point],
    region_preds: &[Vec<Point>],
    region_gts: &[Vec<Point>],
    lambda: f64,
) -> Result<f64> {
    if global_gt.len() != NUM_LANDMARKS {
        return Err(Error::PointCount {
            expected: NUM_LANDMARKS,
            found: global_gt.len(),
        });
    }
    if region_preds.len() != Region::ALL.len() || region_gts.len() != Region::ALL.len() {
        return Err(Error::SizeMismatch(format!(
            "expected 4 regions, got {} predictions and {} targets",
            region_preds.len(),
            region_gts.len()
        )));
    }
    let mut total = mean_squared_distance(global_pred, global_gt)?;
    for ((region, pred), gt) in Region::ALL.iter().zip(region_preds).zip(region_gts) {
        if gt.len() != region.num_landmarks() {
            return Err(Error::PointCount {
                expected: region.num_landmarks(),
                found: gt.len(),
            });
        }
        total += lambda * mean_squared_distance(pred, gt)?;
    }
    Ok(total)
}

/// Batch mean of the per-sample squared distance averaged over points;
/// inputs are `(B, N, 2)`.
pub fn mse_tensor(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (_, n, _) = pred.dims3()?;
    let per_sample = (pred - target)?.sqr()?.sum((1, 2))?;
    Ok((per_sample.mean_all()? / n as f64)?)
}

/// Pixel coordinates `(B, N, 2)` to normalized ones for a frame of side `size`.
pub fn normalize_tensor(coords: &Tensor, size: usize) -> Result<Tensor> {
    Ok(coords.affine(1.0 / size as f64, -0.5)?)
}

/// One training example in the high-resolution frame.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub hr: Image,
    pub low: Image,
    pub landmarks: LandmarkSet,
}

impl Sample {
    pub fn new(id: impl Into<String>, hr: Image, landmarks: LandmarkSet, geometry: &PipelineGeometry) -> Result<Self> {
        let s = geometry.hr_size;
        if hr.width() != s || hr.height() != s || hr.channels() != 3 {
            return Err(Error::SizeMismatch(format!(
                "training images must be {s}x{s} RGB, got {}x{}x{}",
                hr.width(),
                hr.height(),
                hr.channels()
            )));
        }
        if landmarks.width() as usize != s || landmarks.height() as usize != s {
            return Err(Error::SizeMismatch("landmarks are not in the image frame".into()));
        }
        let low = downsize(&hr, geometry);
        Ok(Self {
            id: id.into(),
            hr,
            low,
            landmarks,
        })
    }
}

/// Global targets `(B, 68, 2)`, normalized and clamped into the frame.
pub fn global_targets(samples: &[&Sample], geometry: &PipelineGeometry) -> Result<Tensor> {
    let g = geometry.global_size as f64;
    let f = geometry.factor();
    let mut v = Vec::with_capacity(samples.len() * NUM_LANDMARKS * 2);
    for s in samples {
        for p in s.landmarks.points() {
            v.push(((p.x / f).clamp(0.0, g - 1.0) / g - 0.5) as f32);
            v.push(((p.y / f).clamp(0.0, g - 1.0) / g - 0.5) as f32);
        }
    }
    Ok(Tensor::from_vec(v, (samples.len(), NUM_LANDMARKS, 2), &Device::Cpu)?)
}

/// Ground-truth landmarks of one region expressed in a crop's network frame
/// and channel order, clamped into the patch. Pixel units.
pub fn region_targets_px(landmarks: &LandmarkSet, crop: &crate::region::RegionCrop) -> Vec<Point> {
    let p = (crop.patch_size.0 - 1) as f64;
    let q = (crop.patch_size.1 - 1) as f64;
    crop.region
        .network_indices()
        .iter()
        .map(|&i| {
            let local = crop.to_network_frame(crop.global_to_local(landmarks.points()[i]));
            Point::new(local.x.clamp(0.0, p), local.y.clamp(0.0, q))
        })
        .collect()
}

fn region_targets(samples: &[&Sample], out: &crate::pipeline::RegionOutput) -> Result<Tensor> {
    let n = out.region.num_landmarks();
    let size = out.crops[0].patch_size.0 as f64;
    let mut v = Vec::with_capacity(samples.len() * n * 2);
    for (s, crop) in samples.iter().zip(&out.crops) {
        for p in region_targets_px(&s.landmarks, crop) {
            v.push((p.x / size - 0.5) as f32);
            v.push((p.y / size - 0.5) as f32);
        }
    }
    Ok(Tensor::from_vec(v, (samples.len(), n, 2), &Device::Cpu)?)
}

/// Loss terms of one joint batch.
pub struct JointLoss {
    pub total: Tensor,
    pub global: Tensor,
    /// In [`Region::ALL`] order.
    pub regions: Vec<Tensor>,
    pub stages: StageOutput,
}

/// Forward a batch through both stages and evaluate the weighted loss.
pub fn joint_loss(
    bundle: &ModelBundle,
    samples: &[&Sample],
    paddings: &[[f64; 4]],
    lambda: f64,
    temperature: f64,
) -> Result<JointLoss> {
    let geo = bundle.geometry;
    let hr: Vec<&Image> = samples.iter().map(|s| &s.hr).collect();
    let low: Vec<&Image> = samples.iter().map(|s| &s.low).collect();
    let stages = run_stages(bundle.nets(), &hr, &low, &geo, temperature, paddings)?;
    let global = mse_tensor(
        &normalize_tensor(&stages.global_coords, geo.global_size)?,
        &global_targets(samples, &geo)?,
    )?;
    let mut regions = Vec::with_capacity(4);
    let mut total = global.clone();
    for out in &stages.regions {
        let term = mse_tensor(&normalize_tensor(&out.coords, geo.patch_size)?, &region_targets(samples, out)?)?;
        total = (total + (&term * lambda)?)?;
        regions.push(term);
    }
    Ok(JointLoss {
        total,
        global,
        regions,
        stages,
    })
}

/// Global-only loss of a batch.
pub fn global_loss(net: &Network, samples: &[&Sample], geometry: &PipelineGeometry, temperature: f64) -> Result<Tensor> {
    let low: Vec<&Image> = samples.iter().map(|s| &s.low).collect();
    let coords = softargmax_tensor(&net.forward(&images_to_tensor(&low)?)?, temperature)?;
    mse_tensor(&normalize_tensor(&coords, geometry.global_size)?, &global_targets(samples, geometry)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: u8,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Run directory bookkeeping: `config.json`, `metrics.csv`, checkpoints.
pub struct RunDir {
    root: PathBuf,
    metrics: fs::File,
}

impl RunDir {
    pub fn create<T: Serialize>(root: &Path, config: &T) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints")).map_err(|e| Error::io(root, e))?;
        let cfg = root.join("config.json");
        fs::write(&cfg, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&cfg, e))?;
        let path = root.join("metrics.csv");
        let mut metrics = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(metrics, "epoch,phase,train_loss,val_loss,lr").map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            metrics,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    fn log(&mut self, m: &EpochMetrics) -> Result<()> {
        writeln!(
            self.metrics,
            "{},{},{:.9},{:.9},{:e}",
            m.epoch, m.phase, m.train_loss, m.val_loss, m.lr
        )
        .and_then(|_| self.metrics.flush())
        .map_err(|e| Error::io(self.root.join("metrics.csv"), e))
    }
}

fn snapshot(vars: &[Var]) -> Result<Vec<Tensor>> {
    vars.iter().map(|v| Ok(v.as_tensor().copy()?)).collect()
}

fn restore(vars: &[Var], values: &[Tensor]) -> Result<()> {
    for (v, t) in vars.iter().zip(values) {
        v.set(t)?;
    }
    Ok(())
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_scalar::<f32>()? as f64)
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

fn require_nonempty(train: &[Sample], val: &[Sample]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    Ok(())
}

/// Shared epoch loop: optimizes `vars` with Adam, keeps the best validation
/// snapshot and stops after `patience` epochs without improvement.
fn fit<F, V>(
    vars: Vec<Var>,
    phase: u8,
    pc: &PhaseConfig,
    config: &TrainingConfig,
    n_train: usize,
    mut run: Option<&mut RunDir>,
    mut step_loss: F,
    mut val_loss: V,
) -> Result<TrainingHistory>
where
    F: FnMut(&[usize], usize, &mut ChaCha8Rng) -> Result<Tensor>,
    V: FnMut() -> Result<f64>,
{
    let mut opt = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: pc.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best = snapshot(&vars)?;
    let mut stale = 0;
    for epoch in 0..pc.epochs {
        let lr = pc.learning_rate_at(epoch);
        opt.set_learning_rate(lr);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1000 * epoch as u64 + phase as u64));
        let mut total = 0.0;
        let mut count = 0;
        for (bi, batch) in batches(n_train, pc.batch_size, config.seed, epoch).iter().enumerate() {
            let loss = step_loss(batch, epoch, &mut rng)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    batch: format!("phase {phase} epoch {epoch} batch {bi}"),
                });
            }
            opt.backward_step(&loss)?;
            total += value * batch.len() as f64;
            count += batch.len();
        }
        let val = val_loss()?;
        if !val.is_finite() {
            return Err(Error::Diverged {
                batch: format!("phase {phase} epoch {epoch} validation"),
            });
        }
        let m = EpochMetrics {
            epoch,
            phase,
            train_loss: total / count as f64,
            val_loss: val,
            lr,
        };
        log::info!(
            "phase {phase} epoch {epoch}: train {:.6} val {:.6} lr {lr:e}",
            m.train_loss,
            m.val_loss
        );
        if let Some(r) = run.as_deref_mut() {
            r.log(&m)?;
        }
        history.epochs.push(m);
        if val < history.best_val_loss {
            history.best_val_loss = val;
            history.best_epoch = epoch;
            best = snapshot(&vars)?;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    restore(&vars, &best)?;
    Ok(history)
}

fn mean_loss<F>(n: usize, batch: usize, mut f: F) -> Result<f64>
where
    F: FnMut(&[usize]) -> Result<Tensor>,
{
    let mut total = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch) {
        total += scalar(&f(chunk)?)? * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Phase 1: train the global network alone. The best validation weights are
/// left in `net`.
pub fn train_global(
    net: &Network,
    train: &[Sample],
    val: &[Sample],
    config: &TrainingConfig,
    geometry: &PipelineGeometry,
    run: Option<&mut RunDir>,
) -> Result<TrainingHistory> {
    config.validate()?;
    require_nonempty(train, val)?;
    let pc = config.phase1;
    let t = config.temperature;
    let history = fit(
        net.vars(),
        1,
        &pc,
        config,
        train.len(),
        run,
        |batch, _, _| {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            global_loss(net, &refs, geometry, t)
        },
        || {
            mean_loss(val.len(), pc.batch_size, |idx| {
                let refs: Vec<&Sample> = idx.iter().map(|&i| &val[i]).collect();
                global_loss(net, &refs, geometry, t).map(|l| l.detach())
            })
        },
    )?;
    Ok(history)
}

/// Phase 2: train the global and region networks jointly with randomized
/// crop padding. The best validation weights are left in `bundle`.
pub fn train_joint(
    bundle: &ModelBundle,
    train: &[Sample],
    val: &[Sample],
    config: &TrainingConfig,
    run: Option<&mut RunDir>,
) -> Result<TrainingHistory> {
    config.validate()?;
    require_nonempty(train, val)?;
    let pc = config.phase2;
    let (lambda, t) = (config.lambda, config.temperature);
    fit(
        bundle.all_vars(),
        2,
        &pc,
        config,
        train.len(),
        run,
        |batch, _, rng| {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let paddings: Vec<[f64; 4]> = refs
                .iter()
                .map(|_| std::array::from_fn(|_| sample_padding(rng)))
                .collect();
            Ok(joint_loss(bundle, &refs, &paddings, lambda, t)?.total)
        },
        || {
            mean_loss(val.len(), pc.batch_size, |idx| {
                let refs: Vec<&Sample> = idx.iter().map(|&i| &val[i]).collect();
                let pads = vec![[crate::region::INFERENCE_PADDING; 4]; refs.len()];
                Ok(joint_loss(bundle, &refs, &pads, lambda, t)?.total.detach())
            })
        },
    )
}

/// Effective configuration written to run directories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub network: crate::model::NetworkConfig,
    pub geometry: PipelineGeometry,
    pub extra: HashMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn fingerprint(&self) -> String {
        fingerprint(&(&self.training, &self.network, &self.geometry))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn oracle(gp: &[Point], gg: &[Point], rp: &[Vec<Point>], rg: &[Vec<Point>], lambda: f64) -> f64 {
        let mut g = 0.0;
        for i in 0..gp.len() {
            let dx = gp[i].x - gg[i].x;
            let dy = gp[i].y - gg[i].y;
            g += dx * dx + dy * dy;
        }
        let mut r = 0.0;
        for k in 0..rp.len() {
            let mut s = 0.0;
            for j in 0..rp[k].len() {
                s += (rp[k][j].x - rg[k][j].x).powi(2) + (rp[k][j].y - rg[k][j].y).powi(2);
            }
            r += s / rp[k].len() as f64;
        }
        g / gp.len() as f64 + lambda * r
    }

    fn rand_points(rng: &mut impl Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
            .collect()
    }

    fn instance(rng: &mut impl Rng) -> (Vec<Point>, Vec<Point>, Vec<Vec<Point>>, Vec<Vec<Point>>) {
        let rp = Region::ALL.iter().map(|r| rand_points(rng, r.num_landmarks())).collect();
        let rg = Region::ALL.iter().map(|r| rand_points(rng, r.num_landmarks())).collect();
        (rand_points(rng, 68), rand_points(rng, 68), rp, rg)
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, gg, _, rg) = instance(&mut rng);
        assert_eq!(loss(&gg, &gg, &rg, &rg, 0.25).unwrap(), 0.0);
        let gg: Vec<Point> = gg.iter().map(|p| Point::new(p.x.clamp(-0.39, 0.39), p.y)).collect();
        let shifted: Vec<Point> = gg.iter().map(|p| p.offset(0.1, 0.0)).collect();
        let l = loss(&shifted, &gg, &rg, &rg, 0.25).unwrap();
        assert!((l - 0.01).abs() < 1e-15, "{l}");
        for _ in 0..20 {
            let (gp, gg, rp, rg) = instance(&mut rng);
            let lambda = rng.gen_range(0.0..1.0);
            let a = loss(&gp, &gg, &rp, &rg, lambda).unwrap();
            assert!((a - oracle(&gp, &gg, &rp, &rg, lambda)).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (gp, gg, rp, rg) = instance(&mut rng);
        assert!(matches!(loss(&gp[..67], &gg, &rp, &rg, 0.25), Err(Error::PointCount { .. })));
        assert!(loss(&gp, &gg, &rp[..3], &rg, 0.25).is_err());
        let mut bad = gp.clone();
        bad[3].x = 3.0;
        assert!(matches!(loss(&bad, &gg, &rp, &rg, 0.25), Err(Error::Unnormalized { .. })));
    }

    #[test]
    fn tensor_loss_matches_scalar_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (gp, gg, _, _) = instance(&mut rng);
        let t = |p: &[Point]| {
            let v: Vec<f32> = p.iter().flat_map(|q| [q.x as f32, q.y as f32]).collect();
            Tensor::from_vec(v, (1, p.len(), 2), &Device::Cpu).unwrap()
        };
        let a = scalar(&mse_tensor(&t(&gp), &t(&gg)).unwrap()).unwrap();
        let b = mean_squared_distance(&gp, &gg).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn schedule_pointwise() {
        let pc = TrainingConfig::default().phase1;
        assert_eq!(pc.learning_rate_at(0), 1e-4);
        assert_eq!(pc.learning_rate_at(29), 1e-4);
        assert_eq!(pc.learning_rate_at(30), 1e-4);
        assert!((pc.learning_rate_at(44) - 1e-4 * 15.0 / 29.0).abs() < 1e-18);
        assert_eq!(pc.learning_rate_at(59), 0.0);
        let mut prev = f64::INFINITY;
        for e in 0..60 {
            let lr = pc.learning_rate_at(e);
            assert!(lr <= prev);
            prev = lr;
        }
        let bad = PhaseConfig {
            decay_start: 60,
            ..pc
        };
        assert!(bad.validate("x").is_err());
        assert!(TrainingConfig {
            lambda: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn region_targets_invert_local_to_global() {
        let lm = crate::synthetic::template_landmarks(256);
        for region in Region::ALL {
            let crop = crate::region::crop_for(region, lm.points(), 0.3, 256, 256, 64).unwrap();
            let t = region_targets_px(&lm, &crop);
            for (p, &i) in t.iter().zip(&region.network_indices()) {
                let back = crop.local_to_global(crop.to_network_frame(*p));
                assert!(back.distance(&lm.points()[i]) < 1e-9);
            }
        }
    }
}
