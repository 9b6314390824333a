//! Density fields and ray marching: transmittance, expected-ray-length
//! depth, level-set point clouds and emission-absorption images.
//!
//! Depth maps produced here hold camera-space z, not ray length, so they can
//! be compared directly with rasterized depth.

mod fields;
mod voxel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraRig, Ray};
use crate::geometry::Aabb;
use crate::raster::DepthMap;
use crate::{Error, Result, Vec3};

pub use fields::{SlabField, SphereField, ZeroField};
pub use voxel::{decode_dvox, encode_dvox, read_dvox, write_dvox, VoxelGrid};

/// A nonnegative density σ(x), optionally with view-dependent radiance.
///
/// σ must be zero outside [`DensityField::bounds`].
pub trait DensityField: Send + Sync {
    fn sigma(&self, x: &Vec3) -> f64;

    /// σ at `x` plus a radius around `x` in which σ is known to be zero
    /// (zero when nothing is known). Used to skip empty space exactly.
    fn sigma_with_clearance(&self, x: &Vec3) -> (f64, f64) {
        (self.sigma(x), 0.0)
    }

    fn bounds(&self) -> Aabb;

    fn has_radiance(&self) -> bool {
        false
    }

    /// RGB in [0,1]³, `None` when the field has no radiance.
    fn radiance(&self, _x: &Vec3, _dir: &Vec3) -> Option<[f64; 3]> {
        None
    }
}

impl<F: DensityField + ?Sized> DensityField for &F {
    fn sigma(&self, x: &Vec3) -> f64 {
        (**self).sigma(x)
    }
    fn sigma_with_clearance(&self, x: &Vec3) -> (f64, f64) {
        (**self).sigma_with_clearance(x)
    }
    fn bounds(&self) -> Aabb {
        (**self).bounds()
    }
    fn has_radiance(&self) -> bool {
        (**self).has_radiance()
    }
    fn radiance(&self, x: &Vec3, dir: &Vec3) -> Option<[f64; 3]> {
        (**self).radiance(x, dir)
    }
}

/// How sample weights turn into a depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthWeights {
    /// `Σ tᵢwᵢ / Σ wᵢ` with `wᵢ = σᵢTᵢΔtᵢ`: a density-weighted mean distance.
    #[default]
    Normalized,
    /// The raw sum `Σ tᵢwᵢ`.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelSetMode {
    /// First qualifying sample per ray.
    #[default]
    FirstHit,
    /// Every qualifying sample.
    AllHits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarchConfig {
    pub t_near: f64,
    pub t_far: f64,
    pub n_samples: usize,
    /// Jitter each sample uniformly inside its bin instead of the midpoint.
    pub stratified: bool,
    /// Seed for stratified jitter; combined with the pixel index.
    pub seed: u64,
    /// Rays with lower opacity are background.
    pub opacity_threshold: f64,
    pub depth_weights: DepthWeights,
}

impl Default for MarchConfig {
    fn default() -> Self {
        Self {
            t_near: 1.7,
            t_far: 3.7,
            n_samples: 256,
            stratified: false,
            seed: 0,
            opacity_threshold: 0.5,
            depth_weights: DepthWeights::Normalized,
        }
    }
}

impl MarchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_near.is_finite() && self.t_far.is_finite() && self.t_near >= 0.0 && self.t_near < self.t_far) {
            return Err(Error::Config(format!(
                "march range must satisfy 0 <= t_near < t_far, got [{}, {}]",
                self.t_near, self.t_far
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("march n_samples must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity_threshold) {
            return Err(Error::Config("opacity_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.t_far - self.t_near) / self.n_samples as f64
    }
}

/// `T₁ = 1`, `Tᵢ = exp(−Σ_{j<i} σⱼΔtⱼ)`.
pub fn transmittance(densities: &[f64], deltas: &[f64]) -> Result<Vec<f64>> {
    if densities.len() != deltas.len() {
        return Err(Error::Dimension {
            what: "transmittance deltas",
            expected: densities.len(),
            actual: deltas.len(),
        });
    }
    if let Some(s) = densities.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!("density must be finite and nonnegative, got {s}")));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::Domain(format!("step must be positive, got {d}")));
    }
    let mut acc = 0.0f64;
    Ok(densities
        .iter()
        .zip(deltas)
        .map(|(s, d)| {
            let t = (-acc).exp();
            acc += s * d;
            t
        })
        .collect())
}

/// Per-ray quadrature result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySummary {
    /// Estimated distance along the ray.
    pub depth: f64,
    /// `1 − T_{N+1}`.
    pub opacity: f64,
}

fn pixel_rng(cfg: &MarchConfig, pixel: (usize, usize)) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((pixel.0 as u64) << 32) | pixel.1 as u64);
    rng
}

/// Visits the samples of a ray in order, skipping those known to be empty.
/// The callback receives `(index, t, σ)` for every sample that may be
/// nonzero; skipped samples have σ = 0 exactly.
fn march<F: DensityField + ?Sized>(field: &F, ray: &Ray, cfg: &MarchConfig, mut visit: impl FnMut(usize, f64, f64) -> bool) {
    let dt = cfg.step();
    let n = cfg.n_samples;
    let bounds = field.bounds();
    if bounds.is_empty() {
        return;
    }
    let Some((b0, b1)) = bounds.ray_interval(&ray.origin, &ray.direction) else {
        return;
    };
    if b1 < cfg.t_near || b0 > cfg.t_far {
        return;
    }
    let (b0, b1) = (b0.max(cfg.t_near), b1.min(cfg.t_far));
    let first = (((b0 - cfg.t_near) / dt).floor().max(0.0) as usize).saturating_sub(1);
    let last = ((((b1 - cfg.t_near) / dt).ceil().max(0.0) as usize) + 1).min(n);
    let mut jitter = cfg.stratified.then(|| pixel_rng(cfg, ray.pixel));
    // keep stratified offsets independent of the bounds clipping
    if let Some(rng) = jitter.as_mut() {
        for _ in 0..first {
            let _: f64 = rng.random();
        }
    }
    let mut clear_until = f64::NEG_INFINITY;
    for i in first..last {
        let offset = match jitter.as_mut() {
            Some(rng) => rng.random::<f64>(),
            None => 0.5,
        };
        let t = cfg.t_near + (i as f64 + offset) * dt;
        if t <= clear_until {
            continue;
        }
        let (s, clearance) = field.sigma_with_clearance(&ray.at(t));
        if clearance > 0.0 {
            clear_until = t + clearance * (1.0 - 1e-9);
        }
        if s > 0.0 && !visit(i, t, s) {
            return;
        }
    }
}

/// Marching stops once transmittance falls below `exp(-OPTICAL_CUTOFF)`;
/// later samples change no result above that relative size.
pub const OPTICAL_CUTOFF: f64 = 50.0;

/// Expected ray length and opacity along one ray.
pub fn quadrature_depth<F: DensityField + ?Sized>(field: &F, ray: &Ray, cfg: &MarchConfig) -> Result<RaySummary> {
    cfg.validate()?;
    Ok(quadrature_unchecked(field, ray, cfg))
}

fn quadrature_unchecked<F: DensityField + ?Sized>(field: &F, ray: &Ray, cfg: &MarchConfig) -> RaySummary {
    let dt = cfg.step();
    let mut optical = 0.0f64;
    let mut weighted_t = 0.0;
    let mut weight_sum = 0.0;
    march(field, ray, cfg, |_, t, s| {
        let w = s * (-optical).exp() * dt;
        weighted_t += t * w;
        weight_sum += w;
        optical += s * dt;
        optical < OPTICAL_CUTOFF
    });
    let depth = match cfg.depth_weights {
        DepthWeights::Literal => weighted_t,
        DepthWeights::Normalized if weight_sum > 0.0 => weighted_t / weight_sum,
        DepthWeights::Normalized => 0.0,
    };
    RaySummary {
        depth,
        opacity: 1.0 - (-optical).exp(),
    }
}

/// Per-pixel depth in camera z. Rays below the opacity threshold are
/// background.
pub fn render_depth_map<F: DensityField + ?Sized>(field: &F, rig: &CameraRig, cfg: &MarchConfig) -> Result<DepthMap> {
    cfg.validate()?;
    let (w, h) = (rig.width, rig.height);
    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|row| {
            (0..w)
                .map(|col| {
                    let ray = rig.ray(row, col);
                    let r = quadrature_unchecked(field, &ray, cfg);
                    let z_dir = (rig.extrinsics.rotation * ray.direction).z;
                    (r.opacity >= cfg.opacity_threshold && r.opacity > 0.0).then_some(r.depth * z_dir)
                })
                .collect()
        })
        .collect();
    Ok(DepthMap::from_options(w, h, rows.into_iter().flatten()))
}

/// Sample points with σ ≥ α, in pixel-major then sample order.
pub fn extract_level_set<F: DensityField + ?Sized>(
    field: &F,
    rig: &CameraRig,
    cfg: &MarchConfig,
    alpha: f64,
    mode: LevelSetMode,
) -> Result<Vec<Vec3>> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("level-set alpha must be positive, got {alpha}")));
    }
    let rows: Vec<Vec<Vec3>> = (0..rig.height)
        .into_par_iter()
        .map(|row| {
            let mut out = Vec::new();
            for col in 0..rig.width {
                let ray = rig.ray(row, col);
                march(field, &ray, cfg, |_, t, s| {
                    if s >= alpha {
                        out.push(ray.at(t));
                        return mode == LevelSetMode::AllHits;
                    }
                    true
                });
            }
            out
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Linear RGB in [0,1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbRender {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbRender {
    pub fn to_image(&self) -> crate::imageio::RgbImage {
        crate::imageio::RgbImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
                .collect(),
        }
    }
}

/// Emission-absorption compositing over a white background.
pub fn render_rgb<F: DensityField + ?Sized>(field: &F, rig: &CameraRig, cfg: &MarchConfig) -> Result<RgbRender> {
    cfg.validate()?;
    if !field.has_radiance() {
        return Err(Error::Unsupported("density field has no radiance".into()));
    }
    let dt = cfg.step();
    let rows: Vec<Vec<[f64; 3]>> = (0..rig.height)
        .into_par_iter()
        .map(|row| {
            (0..rig.width)
                .map(|col| {
                    let ray = rig.ray(row, col);
                    let mut optical = 0.0f64;
                    let mut rgb = [0.0; 3];
                    march(field, &ray, cfg, |_, t, s| {
                        let w = (-optical).exp() * (1.0 - (-s * dt).exp());
                        let c = field.radiance(&ray.at(t), &ray.direction).unwrap_or([1.0; 3]);
                        for k in 0..3 {
                            rgb[k] += w * c[k];
                        }
                        optical += s * dt;
                        optical < OPTICAL_CUTOFF
                    });
                    let background = (-optical).exp();
                    rgb.map(|v| (v + background).clamp(0.0, 1.0))
                })
                .collect()
        })
        .collect();
    Ok(RgbRender {
        width: rig.width,
        height: rig.height,
        data: rows.into_iter().flatten().collect(),
    })
}
