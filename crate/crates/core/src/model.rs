//! Encoder-decoder heatmap networks and the on-disk model bundle.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::landmarks::NUM_LANDMARKS;
use crate::region::{Region, RegionKind};

pub const BUNDLE_VERSION: &str = "1";
const NORM_EPS: f64 = 1e-5;

/// Width, depth and stem kernel of every network in a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub base_width: usize,
    pub res_blocks: usize,
    pub stem_kernel: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            res_blocks: 6,
            stem_kernel: 7,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.stem_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "base width must be positive and stem kernel odd, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Image sizes of the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineGeometry {
    /// Side of the high-resolution frame.
    pub hr_size: usize,
    /// Input side of the global network.
    pub global_size: usize,
    /// Input side of the region networks.
    pub patch_size: usize,
}

impl Default for PipelineGeometry {
    fn default() -> Self {
        Self {
            hr_size: 1024,
            global_size: 256,
            patch_size: 256,
        }
    }
}

impl PipelineGeometry {
    pub fn factor(&self) -> f64 {
        self.hr_size as f64 / self.global_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.global_size >= 8
            && self.patch_size >= 8
            && self.global_size % 4 == 0
            && self.patch_size % 4 == 0
            && self.hr_size % self.global_size == 0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "sizes must be multiples of 4 with hr a multiple of global, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Shape contract of one network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_channels: usize,
    pub output_channels: usize,
    pub input_size: usize,
    pub output_size: usize,
}

impl NetworkSpec {
    pub fn global(geometry: &PipelineGeometry) -> Self {
        Self {
            name: "global".into(),
            input_channels: 3,
            output_channels: NUM_LANDMARKS,
            input_size: geometry.global_size,
            output_size: geometry.global_size,
        }
    }

    pub fn region(kind: RegionKind, geometry: &PipelineGeometry) -> Self {
        Self {
            name: kind.name().into(),
            input_channels: kind.input_channels(),
            output_channels: kind.num_landmarks(),
            input_size: geometry.patch_size,
            output_size: geometry.patch_size,
        }
    }
}

/// Anything mapping a `(B, C_in, S, S)` batch to `(B, C_out, S, S)` logits.
pub trait HeatmapNet: Send + Sync {
    fn forward(&self, input: &Tensor) -> Result<Tensor>;
}

/// One encoder-decoder network with its trainable parameters.
pub struct Network {
    spec: NetworkSpec,
    config: NetworkConfig,
    params: BTreeMap<String, Var>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("spec", &self.spec)
            .field("config", &self.config)
            .field("params", &self.params.len())
            .finish()
    }
}

/// Names and shapes of every parameter of a network.
fn layout(spec: &NetworkSpec, cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let w = cfg.base_width;
    let mut out = Vec::new();
    let conv = |out: &mut Vec<(String, Vec<usize>)>, name: &str, cin: usize, cout: usize, k: usize| {
        out.push((format!("{name}.weight"), vec![cout, cin, k, k]));
        out.push((format!("{name}.bias"), vec![cout]));
    };
    let norm = |out: &mut Vec<(String, Vec<usize>)>, name: &str, c: usize| {
        out.push((format!("{name}.weight"), vec![c]));
        out.push((format!("{name}.bias"), vec![c]));
    };
    conv(&mut out, "stem", spec.input_channels, w, cfg.stem_kernel);
    norm(&mut out, "stem_norm", w);
    conv(&mut out, "down1", w, 2 * w, 3);
    norm(&mut out, "down1_norm", 2 * w);
    conv(&mut out, "down2", 2 * w, 4 * w, 3);
    norm(&mut out, "down2_norm", 4 * w);
    for i in 0..cfg.res_blocks {
        conv(&mut out, &format!("res{i}.conv1"), 4 * w, 4 * w, 3);
        norm(&mut out, &format!("res{i}.norm1"), 4 * w);
        conv(&mut out, &format!("res{i}.conv2"), 4 * w, 4 * w, 3);
        norm(&mut out, &format!("res{i}.norm2"), 4 * w);
    }
    conv(&mut out, "up1", 4 * w, 2 * w, 3);
    norm(&mut out, "up1_norm", 2 * w);
    conv(&mut out, "up2", 2 * w, w, 3);
    norm(&mut out, "up2_norm", w);
    conv(&mut out, "head", w, spec.output_channels, 1);
    out
}

fn var_from(values: Vec<f32>, shape: &[usize]) -> Result<Var> {
    Ok(Var::from_tensor(&Tensor::from_vec(values, shape, &Device::Cpu)?)?)
}

/// Bicubic (a = -0.75) interpolation matrix for 2x upsampling with
/// half-pixel centers and edge clamping, shape `(2n, n)`.
pub fn bicubic_upsample_matrix(n: usize) -> Vec<f32> {
    const A: f64 = -0.75;
    let cubic = |t: f64| {
        let t = t.abs();
        if t <= 1.0 {
            ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
        } else if t < 2.0 {
            ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
        } else {
            0.0
        }
    };
    let mut m = vec![0.0f32; 2 * n * n];
    for o in 0..2 * n {
        let src = (o as f64 + 0.5) / 2.0 - 0.5;
        let base = src.floor();
        let t = src - base;
        for k in -1i64..=2 {
            let idx = (base as i64 + k).clamp(0, n as i64 - 1) as usize;
            m[o * n + idx] += cubic(k as f64 - t) as f32;
        }
    }
    m
}

fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let uh = Tensor::from_vec(bicubic_upsample_matrix(h), (2 * h, h), x.device())?;
    let uwt = Tensor::from_vec(bicubic_upsample_matrix(w), (2 * w, w), x.device())?.t()?;
    let flat = x.reshape((b * c, h, w))?;
    let rows = flat.broadcast_matmul(&uwt)?;
    let out = uh.broadcast_matmul(&rows)?;
    Ok(out.reshape((b, c, 2 * h, 2 * w))?)
}

impl Network {
    /// Fresh network with He-uniform convolutions and identity norms.
    pub fn new(spec: NetworkSpec, config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if spec.input_size % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} is not a multiple of 4",
                spec.input_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, shape) in layout(&spec, &config) {
            let n: usize = shape.iter().product();
            let values: Vec<f32> = if name.ends_with(".bias") {
                vec![0.0; n]
            } else if shape.len() == 1 {
                vec![1.0; n]
            } else {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let bound = if name.starts_with("head") {
                    (1.0 / fan_in).sqrt()
                } else {
                    (6.0 / fan_in).sqrt()
                };
                (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
            };
            params.insert(name, var_from(values, &shape)?);
        }
        Ok(Self { spec, config, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|v| v.as_tensor())
            .ok_or_else(|| Error::Model(format!("{} has no parameter {name}", self.spec.name)))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    /// Trainable variables, in name order.
    pub fn vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    fn conv(&self, x: &Tensor, name: &str, stride: usize) -> Result<Tensor> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let k = w.dim(2)?;
        let y = x.conv2d(w, k / 2, stride, 1, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
    }

    fn norm(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let g = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let c = g.dim(0)?;
        let mean = x.mean_keepdim((2, 3))?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim((2, 3))?;
        let y = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        Ok(y
            .broadcast_mul(&g.reshape((1, c, 1, 1))?)?
            .broadcast_add(&b.reshape((1, c, 1, 1))?)?)
    }

    fn conv_norm_relu(&self, x: &Tensor, conv: &str, norm: &str, stride: usize) -> Result<Tensor> {
        Ok(self.norm(&self.conv(x, conv, stride)?, norm)?.relu()?)
    }

    /// Overwrite one parameter; the shape must match.
    pub(crate) fn set_param(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .params
            .get(name)
            .ok_or_else(|| Error::Model(format!("{} has no parameter {name}", self.spec.name)))?;
        if var.dims() != value.dims() {
            return Err(Error::Model(format!(
                "shape mismatch for {name}: {:?} vs {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(value)?;
        Ok(())
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path)?;
        Ok(())
    }

    /// Load weights saved by [`Network::save`]; names and shapes must match
    /// `spec` and `config` exactly.
    pub fn load(path: &Path, spec: NetworkSpec, config: NetworkConfig) -> Result<Self> {
        let tensors = candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| {
            Error::Model(format!("cannot read weights {}: {e}", path.display()))
        })?;
        let net = Network::new(spec, config, 0)?;
        if tensors.len() != net.params.len() {
            return Err(Error::Model(format!(
                "{}: expected {} tensors, found {}",
                path.display(),
                net.params.len(),
                tensors.len()
            )));
        }
        for (name, t) in &tensors {
            net.set_param(name, &t.to_dtype(DType::F32)?)?;
        }
        Ok(net)
    }

    /// Deep copy with independent parameters.
    pub fn duplicate(&self) -> Result<Self> {
        let net = Network::new(self.spec.clone(), self.config, 0)?;
        for (name, v) in &self.params {
            net.set_param(name, &v.as_tensor().copy()?)?;
        }
        Ok(net)
    }
}

impl HeatmapNet for Network {
    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = input.dims4()?;
        let s = self.spec.input_size;
        if c != self.spec.input_channels || h != s || w != s {
            return Err(Error::SizeMismatch(format!(
                "{} expects (B, {}, {s}, {s}), got {:?}",
                self.spec.name,
                self.spec.input_channels,
                input.dims()
            )));
        }
        let mut x = self.conv_norm_relu(input, "stem", "stem_norm", 1)?;
        x = self.conv_norm_relu(&x, "down1", "down1_norm", 2)?;
        x = self.conv_norm_relu(&x, "down2", "down2_norm", 2)?;
        for i in 0..self.config.res_blocks {
            let y = self.conv_norm_relu(&x, &format!("res{i}.conv1"), &format!("res{i}.norm1"), 1)?;
            let y = self.norm(&self.conv(&y, &format!("res{i}.conv2"), 1)?, &format!("res{i}.norm2"))?;
            x = (x + y)?;
        }
        x = self.conv_norm_relu(&upsample2(&x)?, "up1", "up1_norm", 1)?;
        x = self.conv_norm_relu(&upsample2(&x)?, "up2", "up2_norm", 1)?;
        self.conv(&x, "head", 1)
    }
}

pub fn build_global(config: NetworkConfig, geometry: &PipelineGeometry, seed: u64) -> Result<Network> {
    Network::new(NetworkSpec::global(geometry), config, seed)
}

/// Region network by kind name (`eye`, `nose`, `mouth`).
pub fn build_region(name: &str, config: NetworkConfig, geometry: &PipelineGeometry, seed: u64) -> Result<Network> {
    let kind: RegionKind = name.parse()?;
    Network::new(NetworkSpec::region(kind, geometry), config, seed)
}

/// Region network initialized from global weights: shared layers copied,
/// the first convolution's feature-map input filters set to the mean RGB
/// filter divided by `N_r`, and the head restricted to the region's channels.
pub fn init_region_from_global(global: &Network, kind: RegionKind, patch_size: usize) -> Result<Network> {
    if global.spec.output_channels != NUM_LANDMARKS || global.spec.input_channels != 3 {
        return Err(Error::Model(format!(
            "source network {} is not a global network",
            global.spec.name
        )));
    }
    let spec = NetworkSpec {
        name: kind.name().into(),
        input_channels: kind.input_channels(),
        output_channels: kind.num_landmarks(),
        input_size: patch_size,
        output_size: patch_size,
    };
    let region = Network::new(spec, global.config, 0)?;
    let n_r = kind.num_landmarks();
    let idx = Tensor::from_vec(
        kind.canonical_indices().iter().map(|&i| i as u32).collect::<Vec<_>>(),
        n_r,
        &Device::Cpu,
    )?;
    for name in region.params.keys() {
        let src = global.param(name)?;
        let value = match name.as_str() {
            "stem.weight" => {
                let rgb_mean = (src.mean_keepdim(1)? / n_r as f64)?;
                let extra = rgb_mean.repeat((1, n_r, 1, 1))?;
                Tensor::cat(&[src, &extra], 1)?
            }
            "head.weight" | "head.bias" => src.index_select(&idx, 0)?,
            _ => src.clone(),
        };
        region.set_param(name, &value.copy()?)?;
    }
    Ok(region)
}

/// Differentiable spatial softargmax over `(B, C, H, W)` logits, returning
/// `(B, C, 2)` pixel coordinates `(x, y)`.
pub fn softargmax_tensor(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let (b, c, h, w) = logits.dims4()?;
    let flat = (logits.reshape((b, c, h * w))? * temperature)?;
    let max = flat.max_keepdim(D::Minus1)?.detach();
    let p = candle_nn::ops::softmax(&flat.broadcast_sub(&max)?, D::Minus1)?;
    let mut grid = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            grid.push(j as f32);
            grid.push(i as f32);
        }
    }
    let grid = Tensor::from_vec(grid, (h * w, 2), logits.device())?;
    Ok(p.broadcast_matmul(&grid)?)
}

/// Serialized description of a bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: String,
    pub geometry: PipelineGeometry,
    pub network: NetworkConfig,
    pub temperature: f64,
    pub num_landmarks: BTreeMap<String, usize>,
    pub patch_size: usize,
    pub config_fingerprint: String,
    pub files: BTreeMap<String, String>,
}

/// Global network plus the eye, nose and mouth networks.
#[derive(Debug)]
pub struct ModelBundle {
    pub geometry: PipelineGeometry,
    pub config: NetworkConfig,
    pub temperature: f64,
    pub fingerprint: String,
    pub global: Network,
    pub eye: Network,
    pub nose: Network,
    pub mouth: Network,
}

pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(&Sha256::digest(&bytes)[..16])
}

impl ModelBundle {
    /// Randomly initialized bundle.
    pub fn new(config: NetworkConfig, geometry: PipelineGeometry, seed: u64) -> Result<Self> {
        geometry.validate()?;
        Ok(Self {
            global: build_global(config, &geometry, seed)?,
            eye: build_region("eye", config, &geometry, seed.wrapping_add(1))?,
            nose: build_region("nose", config, &geometry, seed.wrapping_add(2))?,
            mouth: build_region("mouth", config, &geometry, seed.wrapping_add(3))?,
            geometry,
            config,
            temperature: crate::heatmap::DEFAULT_TEMPERATURE,
            fingerprint: fingerprint(&(config, geometry, seed)),
        })
    }

    /// Bundle whose region networks are initialized from `global`.
    pub fn from_global(global: Network, geometry: PipelineGeometry) -> Result<Self> {
        geometry.validate()?;
        if global.spec != NetworkSpec::global(&geometry) {
            return Err(Error::Model(format!(
                "global network {:?} does not match geometry {geometry:?}",
                global.spec
            )));
        }
        let p = geometry.patch_size;
        Ok(Self {
            eye: init_region_from_global(&global, RegionKind::Eye, p)?,
            nose: init_region_from_global(&global, RegionKind::Nose, p)?,
            mouth: init_region_from_global(&global, RegionKind::Mouth, p)?,
            config: global.config,
            geometry,
            temperature: crate::heatmap::DEFAULT_TEMPERATURE,
            fingerprint: String::new(),
            global,
        })
    }

    pub fn region_net(&self, kind: RegionKind) -> &Network {
        match kind {
            RegionKind::Eye => &self.eye,
            RegionKind::Nose => &self.nose,
            RegionKind::Mouth => &self.mouth,
        }
    }

    pub fn region_vars(&self) -> Vec<Var> {
        RegionKind::ALL
            .iter()
            .flat_map(|&k| self.region_net(k).vars())
            .collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        let mut v = self.global.vars();
        v.extend(self.region_vars());
        v
    }

    fn file_names() -> [(&'static str, &'static str); 4] {
        [
            ("global", "global.safetensors"),
            ("eye", "eye.safetensors"),
            ("nose", "nose.safetensors"),
            ("mouth", "mouth.safetensors"),
        ]
    }

    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            version: BUNDLE_VERSION.into(),
            geometry: self.geometry,
            network: self.config,
            temperature: self.temperature,
            num_landmarks: Region::ALL
                .iter()
                .map(|r| (r.name().to_string(), r.num_landmarks()))
                .collect(),
            patch_size: self.geometry.patch_size,
            config_fingerprint: self.fingerprint.clone(),
            files: Self::file_names()
                .iter()
                .map(|(k, f)| (k.to_string(), f.to_string()))
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (key, file) in Self::file_names() {
            let net = match key {
                "global" => &self.global,
                "eye" => &self.eye,
                "nose" => &self.nose,
                _ => &self.mouth,
            };
            net.save(&dir.join(file))?;
        }
        let json = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join("bundle.json");
        fs::write(&path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("bundle.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: BundleManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Model(format!("invalid {}: {e}", path.display())))?;
        if m.version != BUNDLE_VERSION {
            return Err(Error::Model(format!("unsupported bundle version {}", m.version)));
        }
        m.geometry.validate()?;
        let file = |key: &str| -> Result<std::path::PathBuf> {
            m.files
                .get(key)
                .map(|f| dir.join(f))
                .ok_or_else(|| Error::Model(format!("bundle lists no {key} weights")))
        };
        let g = &m.geometry;
        Ok(Self {
            global: Network::load(&file("global")?, NetworkSpec::global(g), m.network)?,
            eye: Network::load(&file("eye")?, NetworkSpec::region(RegionKind::Eye, g), m.network)?,
            nose: Network::load(&file("nose")?, NetworkSpec::region(RegionKind::Nose, g), m.network)?,
            mouth: Network::load(&file("mouth")?, NetworkSpec::region(RegionKind::Mouth, g), m.network)?,
            geometry: m.geometry,
            config: m.network,
            temperature: m.temperature,
            fingerprint: m.config_fingerprint,
        })
    }
}
