//! Global prediction, region cropping with feature fusion, and refinement,
//! shared by inference and joint training.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;
use crate::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use crate::model::{softargmax_tensor, HeatmapNet, ModelBundle, PipelineGeometry};
use crate::raster::{fit_square, Image, SquareFit};
use crate::region::{
    assemble_full_prediction, crop_for, crop_rgb, Region, RegionCrop, RegionKind, RegionPrediction,
    INFERENCE_PADDING,
};

/// The four networks of a pipeline.
#[derive(Clone, Copy)]
pub struct Nets<'a> {
    pub global: &'a dyn HeatmapNet,
    pub eye: &'a dyn HeatmapNet,
    pub nose: &'a dyn HeatmapNet,
    pub mouth: &'a dyn HeatmapNet,
}

impl<'a> Nets<'a> {
    pub fn region(&self, kind: RegionKind) -> &'a dyn HeatmapNet {
        match kind {
            RegionKind::Eye => self.eye,
            RegionKind::Nose => self.nose,
            RegionKind::Mouth => self.mouth,
        }
    }
}

impl ModelBundle {
    pub fn nets(&self) -> Nets<'_> {
        Nets {
            global: &self.global,
            eye: &self.eye,
            nose: &self.nose,
            mouth: &self.mouth,
        }
    }

    pub fn detector(&self) -> Detector<'_> {
        Detector::new(self.nets(), self.geometry, self.temperature)
    }
}

/// Stack `(C, H, W)` images into a `(B, C, H, W)` tensor.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels(), img.height(), img.width()) != (c, h, w) {
            return Err(Error::SizeMismatch("images in a batch differ in shape".into()));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?)
}

/// Downsize a high-resolution image to the global network input.
pub fn downsize(hr: &Image, geometry: &PipelineGeometry) -> Image {
    let s = 1.0 / geometry.factor();
    hr.resize_scaled(geometry.global_size, geometry.global_size, s, s)
}

fn dense_tensor(values: Vec<f64>, rows: usize, cols: usize) -> Result<Tensor> {
    let v: Vec<f32> = values.into_iter().map(|x| x as f32).collect();
    Ok(Tensor::from_vec(v, (rows, cols), &Device::Cpu)?)
}

/// Fused `(3 + N_r, P, P)` input for one crop. The feature part is a linear
/// function of `global_logits` (one sample, `(68, g, g)`) so gradients reach
/// the global network.
pub fn fuse_tensor(hr: &Image, global_logits: &Tensor, crop: &RegionCrop, geometry: &PipelineGeometry) -> Result<Tensor> {
    let (_, gh, gw) = global_logits.dims3()?;
    let (p, q) = crop.patch_size;
    let (mx, my) = crop.feature_matrices(gw, gh, geometry.factor());
    let mx = dense_tensor(mx, p, gw)?;
    let my = dense_tensor(my, q, gh)?;
    let idx: Vec<u32> = crop.region.network_indices().iter().map(|&i| i as u32).collect();
    let n = idx.len();
    let sel = global_logits.index_select(&Tensor::from_vec(idx, n, &Device::Cpu)?, 0)?;
    let feats = my.broadcast_matmul(&sel)?.broadcast_matmul(&mx.t()?)?;
    let rgb = crop_rgb(hr, crop);
    let rgb = Tensor::from_vec(rgb.data().to_vec(), (3, q, p), &Device::Cpu)?;
    Ok(Tensor::cat(&[&rgb, &feats], 0)?)
}

/// Outputs of one region across the batch.
#[derive(Debug, Clone)]
pub struct RegionOutput {
    pub region: Region,
    pub crops: Vec<RegionCrop>,
    /// `(B, N_r, 2)` patch coordinates in network orientation and channel order.
    pub coords: Tensor,
}

impl RegionOutput {
    /// Refined points per sample in high-resolution pixels, in the region's
    /// group index order.
    pub fn global_points(&self) -> Result<Vec<Vec<Point>>> {
        let coords = self.coords.to_vec3::<f32>()?;
        let order = self.region.network_indices();
        let group = self.region.group().indices();
        coords
            .iter()
            .zip(&self.crops)
            .map(|(pts, crop)| {
                let mut out = vec![Point::default(); group.len()];
                for (xy, &gi) in pts.iter().zip(&order) {
                    let local = crop.to_network_frame(Point::new(xy[0] as f64, xy[1] as f64));
                    let slot = group
                        .iter()
                        .position(|&g| g == gi)
                        .ok_or_else(|| Error::Internal(format!("index {gi} outside {}", self.region)))?;
                    out[slot] = crop.local_to_global(local);
                }
                Ok(out)
            })
            .collect()
    }
}

/// Everything computed by one coarse-to-fine pass.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub global_logits: Tensor,
    /// `(B, 68, 2)` in global-network pixels.
    pub global_coords: Tensor,
    /// In [`Region::ALL`] order.
    pub regions: Vec<RegionOutput>,
}

impl StageOutput {
    /// Global predictions per sample, scaled to the high-resolution frame.
    pub fn global_points_hr(&self, geometry: &PipelineGeometry) -> Result<Vec<Vec<Point>>> {
        let f = geometry.factor();
        Ok(self
            .global_coords
            .to_vec3::<f32>()?
            .iter()
            .map(|pts| pts.iter().map(|xy| Point::new(xy[0] as f64 * f, xy[1] as f64 * f)).collect())
            .collect())
    }
}

/// Run the full pass on a batch of high-resolution images (`hr_size` square).
/// `paddings[b][r]` is the padding for sample `b` and region `Region::ALL[r]`.
/// Crops follow the detached global predictions.
pub fn run_stages(
    nets: Nets<'_>,
    hr_images: &[&Image],
    low_images: &[&Image],
    geometry: &PipelineGeometry,
    temperature: f64,
    paddings: &[[f64; 4]],
) -> Result<StageOutput> {
    let b = hr_images.len();
    if low_images.len() != b || paddings.len() != b {
        return Err(Error::SizeMismatch("batch inputs differ in length".into()));
    }
    let global_logits = nets.global.forward(&images_to_tensor(low_images)?)?;
    let global_coords = softargmax_tensor(&global_logits, temperature)?;
    let f = geometry.factor();
    let centers: Vec<Vec<Point>> = global_coords
        .detach()
        .to_vec3::<f32>()?
        .iter()
        .map(|pts| pts.iter().map(|xy| Point::new(xy[0] as f64 * f, xy[1] as f64 * f)).collect())
        .collect();
    let hr = geometry.hr_size as u32;
    let mut regions = Vec::with_capacity(4);
    for kind in RegionKind::ALL {
        let members: Vec<(usize, Region)> = Region::ALL
            .iter()
            .enumerate()
            .filter(|(_, r)| r.kind() == kind)
            .map(|(i, &r)| (i, r))
            .collect();
        let mut inputs = Vec::new();
        let mut crops = Vec::new();
        for &(ri, region) in &members {
            for s in 0..b {
                let crop = crop_for(region, &centers[s], paddings[s][ri], hr, hr, geometry.patch_size)?;
                inputs.push(fuse_tensor(hr_images[s], &global_logits.get(s)?, &crop, geometry)?);
                crops.push(crop);
            }
        }
        let logits = nets.region(kind).forward(&Tensor::stack(&inputs, 0)?)?;
        let coords = softargmax_tensor(&logits, temperature)?;
        for (m, &(_, region)) in members.iter().enumerate() {
            regions.push(RegionOutput {
                region,
                crops: crops[m * b..(m + 1) * b].to_vec(),
                coords: coords.narrow(0, m * b, b)?,
            });
        }
    }
    regions.sort_by_key(|r| Region::ALL.iter().position(|&x| x == r.region));
    Ok(StageOutput {
        global_logits,
        global_coords,
        regions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub crops: Vec<RegionCrop>,
    pub fallback_regions: Vec<Region>,
    /// Mapping from the input image to the high-resolution frame.
    pub input_fit: SquareFit,
}

/// Result of [`Detector::forward_full`], in the input image's pixel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPrediction {
    pub global: LandmarkSet,
    pub refined: LandmarkSet,
    pub diagnostics: Diagnostics,
}

/// Inference front end over a set of networks.
#[derive(Clone, Copy)]
pub struct Detector<'a> {
    pub nets: Nets<'a>,
    pub geometry: PipelineGeometry,
    pub temperature: f64,
    pub padding: f64,
}

impl<'a> Detector<'a> {
    pub fn new(nets: Nets<'a>, geometry: PipelineGeometry, temperature: f64) -> Self {
        Self {
            nets,
            geometry,
            temperature,
            padding: INFERENCE_PADDING,
        }
    }

    /// Coarse prediction then regional refinement. Inputs that are not
    /// `hr_size` squares are padded to a square and rescaled first; results
    /// are mapped back to the input frame.
    pub fn forward_full(&self, image: &Image) -> Result<FullPrediction> {
        if image.channels() != 3 || image.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "expected a non-empty RGB image, got {} channels",
                image.channels()
            )));
        }
        let (hr, fit) = fit_square(image, self.geometry.hr_size);
        let low = downsize(&hr, &self.geometry);
        let out = run_stages(
            self.nets,
            &[&hr],
            &[&low],
            &self.geometry,
            self.temperature,
            &[[self.padding; 4]],
        )?;
        let size = self.geometry.hr_size as u32;
        let global_hr = LandmarkSet::new(out.global_points_hr(&self.geometry)?.remove(0), size, size)?;
        let mut refined = Vec::with_capacity(4);
        let mut crops = Vec::with_capacity(4);
        for r in &out.regions {
            refined.push(RegionPrediction {
                region: r.region,
                points: r.global_points()?.remove(0),
            });
            crops.push(r.crops[0]);
        }
        let assembled = assemble_full_prediction(&global_hr, &refined)?;
        let (w, h) = (image.width() as u32, image.height() as u32);
        let back = |set: &LandmarkSet| {
            LandmarkSet::new(set.points().iter().map(|&p| fit.invert(p)).collect(), w, h)
        };
        Ok(FullPrediction {
            global: back(&global_hr)?,
            refined: back(&assembled.landmarks)?,
            diagnostics: Diagnostics {
                crops,
                fallback_regions: assembled.fallback_regions,
                input_fit: fit,
            },
        })
    }

    /// Global network logits for an image, as a heatmap stack.
    pub fn global_heatmaps(&self, image: &Image) -> Result<HeatmapStack> {
        let (hr, _) = fit_square(image, self.geometry.hr_size);
        let low = downsize(&hr, &self.geometry);
        let logits = self.nets.global.forward(&images_to_tensor(&[&low])?)?;
        let (_, c, h, w) = logits.dims4()?;
        if c != NUM_LANDMARKS {
            return Err(Error::Model(format!("global network produced {c} channels")));
        }
        let v: Vec<f32> = logits.flatten_all()?.to_vec1()?;
        HeatmapStack::from_f32(c, h, w, &v)
    }
}
