//! Normalized pinhole cameras looking at a subject placed at the world origin.
//!
//! Conventions:
//! - world is y-up, the subject sits at the origin;
//! - extrinsics map world to camera, the camera looks down its +z axis;
//! - intrinsics are normalized so the image spans `[0,1]²` with the principal
//!   point at `(0.5, 0.5)`, `u` grows with camera +x and `v` with camera +y;
//! - the field of view is vertical.
//!
//! The frontal camera (azimuth = elevation = 0) sits at `(0, 0, -distance)`
//! with `R = I`.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

pub const MIN_FOV_DEG: f64 = 12.0;
pub const MAX_FOV_DEG: f64 = 27.0;
pub const CAMERA_DISTANCE_M: f64 = 2.7;
pub const MAX_ANGLE_RAD: f64 = FRAC_PI_4;

/// Points closer than this to the camera plane are flagged behind-camera.
pub const MIN_PROJECT_Z: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Intrinsics {
    pub fov_deg: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Normalized 3×3 matrix.
    pub fn matrix(&self) -> Mat3 {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel-space matrix: first row scaled by width, second by height.
    pub fn pixel_matrix(&self, width: usize, height: usize) -> Mat3 {
        let mut k = self.matrix();
        for c in 0..3 {
            k[(0, c)] *= width as f64;
            k[(1, c)] *= height as f64;
        }
        k
    }
}

pub fn build_intrinsics(fov_deg: f64) -> Result<Intrinsics> {
    if !fov_deg.is_finite() || fov_deg <= 0.0 || fov_deg >= 180.0 {
        return Err(Error::Domain(format!(
            "field of view must lie in (0, 180) degrees, got {fov_deg}"
        )));
    }
    let f = 1.0 / (2.0 * (fov_deg.to_radians() / 2.0).tan());
    Ok(Intrinsics {
        fov_deg,
        fx: f,
        fy: f,
        cx: 0.5,
        cy: 0.5,
    })
}

/// World-to-camera rigid transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrinsics {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Extrinsics {
    /// Camera at `eye` looking at the origin with world +y as the up hint.
    pub fn look_at_origin(eye: Vec3) -> Self {
        let forward = (-eye).normalize();
        let x_axis = Vec3::y().cross(&forward).normalize();
        let y_axis = forward.cross(&x_axis);
        let rotation = Matrix3::from_rows(&[
            x_axis.transpose(),
            y_axis.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * eye);
        Self {
            rotation,
            translation,
        }
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// `[R|t]` as a 3×4 matrix.
    pub fn matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `[R|t; 0 0 0 1]`.
    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 4>(0, 0).copy_from(&self.matrix());
        m
    }
}

/// A complete camera: intrinsics, extrinsics and the image raster.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    /// `K·[R|t]`.
    pub projection: Matrix3x4<f64>,
    pub width: usize,
    pub height: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl CameraRig {
    pub fn new(
        intrinsics: Intrinsics,
        extrinsics: Extrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!(
                "resolution must be at least 1x1, got {width}x{height}"
            )));
        }
        let projection = intrinsics.matrix() * extrinsics.matrix();
        let center = extrinsics.center();
        let distance = center.norm();
        let (azimuth, elevation) = if distance > 0.0 {
            let elevation = (center.y / distance).clamp(-1.0, 1.0).asin();
            (center.x.atan2(-center.z), elevation)
        } else {
            (0.0, 0.0)
        };
        Ok(Self {
            intrinsics,
            extrinsics,
            projection,
            width,
            height,
            azimuth,
            elevation,
            distance,
        })
    }

    /// Look-at rig on a sphere of radius `distance` around the origin.
    pub fn orbit(
        fov_deg: f64,
        azimuth: f64,
        elevation: f64,
        distance: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(distance.is_finite() && distance > 0.0) {
            return Err(Error::Domain(format!("distance must be positive, got {distance}")));
        }
        if elevation.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Domain("elevation must stay below ±90°".into()));
        }
        let intrinsics = build_intrinsics(fov_deg)?;
        let eye = distance
            * Vec3::new(
                azimuth.sin() * elevation.cos(),
                elevation.sin(),
                -azimuth.cos() * elevation.cos(),
            );
        let extrinsics = if azimuth == 0.0 && elevation == 0.0 {
            // exact identity rotation for the frontal pose
            Extrinsics {
                rotation: Mat3::identity(),
                translation: Vec3::new(0.0, 0.0, distance),
            }
        } else {
            Extrinsics::look_at_origin(eye)
        };
        let mut rig = Self::new(intrinsics, extrinsics, width, height)?;
        rig.azimuth = azimuth;
        rig.elevation = elevation;
        rig.distance = distance;
        Ok(rig)
    }

    /// Frontal rig at the standard distance.
    pub fn frontal(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        Self::orbit(fov_deg, 0.0, 0.0, CAMERA_DISTANCE_M, width, height)
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain("resolution must be at least 1x1".into()));
        }
        let mut rig = self.clone();
        rig.width = width;
        rig.height = height;
        Ok(rig)
    }

    pub fn center(&self) -> Vec3 {
        self.extrinsics.center()
    }

    /// Normalized coordinates of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.width as f64,
            (row as f64 + 0.5) / self.height as f64,
        )
    }

    /// Unit ray direction in the camera frame through normalized `(u, v)`.
    pub fn camera_direction(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalize()
    }

    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let (u, v) = self.pixel_center(row, col);
        let dir_cam = self.camera_direction(u, v);
        Ray {
            origin: self.center(),
            direction: (self.extrinsics.rotation.transpose() * dir_cam).normalize(),
            pixel: (row, col),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AngleMode {
    /// Standard normal scaled by π/4, redrawn until strictly inside ±π/4.
    #[default]
    Truncnorm,
    /// Uniform on (−π/4, π/4).
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSampling {
    pub mode: AngleMode,
    pub min_fov_deg: f64,
    pub max_fov_deg: f64,
    pub distance_m: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraSampling {
    fn default() -> Self {
        Self {
            mode: AngleMode::Truncnorm,
            min_fov_deg: MIN_FOV_DEG,
            max_fov_deg: MAX_FOV_DEG,
            distance_m: CAMERA_DISTANCE_M,
            width: 512,
            height: 512,
        }
    }
}

impl CameraSampling {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_fov_deg > 0.0 && self.min_fov_deg <= self.max_fov_deg && self.max_fov_deg < 180.0)
        {
            return Err(Error::Config(format!(
                "fov range [{}, {}] is invalid",
                self.min_fov_deg, self.max_fov_deg
            )));
        }
        if !(self.distance_m.is_finite() && self.distance_m > 0.0) {
            return Err(Error::Config("camera distance must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("resolution must be at least 1x1".into()));
        }
        Ok(())
    }
}

fn sample_angle<R: Rng + ?Sized>(rng: &mut R, mode: AngleMode) -> f64 {
    match mode {
        AngleMode::Truncnorm => loop {
            let z: f64 = rng.sample(StandardNormal);
            let a = z * MAX_ANGLE_RAD;
            if a.abs() < MAX_ANGLE_RAD {
                return a;
            }
        },
        AngleMode::Uniform => loop {
            let a = rng.random_range(-MAX_ANGLE_RAD..MAX_ANGLE_RAD);
            if a > -MAX_ANGLE_RAD {
                return a;
            }
        },
    }
}

/// Draws fov, azimuth and elevation (in that order) and builds a look-at rig.
pub fn sample_camera<R: Rng + ?Sized>(rng: &mut R, cfg: &CameraSampling) -> Result<CameraRig> {
    cfg.validate()?;
    let fov = if cfg.min_fov_deg == cfg.max_fov_deg {
        cfg.min_fov_deg
    } else {
        rng.random_range(cfg.min_fov_deg..=cfg.max_fov_deg)
    };
    let azimuth = sample_angle(rng, cfg.mode);
    let elevation = sample_angle(rng, cfg.mode);
    CameraRig::orbit(fov, azimuth, elevation, cfg.distance_m, cfg.width, cfg.height)
}

/// One projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub uv: Vector2<f64>,
    /// Camera-space depth of the point.
    pub depth: f64,
    /// False when the point is at or behind the camera plane.
    pub valid: bool,
}

/// Homogeneous projection followed by the perspective divide.
pub fn project(projection: &Matrix3x4<f64>, points: &[Vec3]) -> Vec<Projection> {
    points
        .iter()
        .map(|p| {
            let h = projection * p.push(1.0);
            let z = h.z;
            let valid = z > MIN_PROJECT_Z;
            let uv = if valid {
                Vector2::new(h.x / z, h.y / z)
            } else {
                Vector2::new(f64::NAN, f64::NAN)
            };
            Projection {
                uv,
                depth: z,
                valid,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: (usize, usize),
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// One ray per pixel center, row-major.
pub fn generate_rays(rig: &CameraRig) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(rig.width * rig.height);
    for row in 0..rig.height {
        for col in 0..rig.width {
            rays.push(rig.ray(row, col));
        }
    }
    rays
}

/// 16 entries of `[R|t; 0 0 0 1]` then 9 entries of `K`, both row-major.
pub fn flatten_conditioning(rig: &CameraRig) -> [f64; 25] {
    let mut c = [0.0; 25];
    let rt = rig.extrinsics.homogeneous();
    for r in 0..4 {
        for col in 0..4 {
            c[r * 4 + col] = rt[(r, col)];
        }
    }
    let k = rig.intrinsics.matrix();
    for r in 0..3 {
        for col in 0..3 {
            c[16 + r * 3 + col] = k[(r, col)];
        }
    }
    c
}

/// Inverse of [`flatten_conditioning`]. The resolution is not part of the
/// conditioning vector and must be supplied.
pub fn unflatten_conditioning(c: &[f64; 25], width: usize, height: usize) -> Result<CameraRig> {
    let rotation = Matrix3::from_fn(|r, col| c[r * 4 + col]);
    let translation = Vec3::new(c[3], c[7], c[11]);
    let fx = c[16];
    let fy = c[20];
    if !(fx > 0.0 && fy > 0.0) {
        return Err(Error::Domain("conditioning vector has non-positive focal length".into()));
    }
    let intrinsics = Intrinsics {
        fov_deg: (2.0 * (1.0 / (2.0 * fy)).atan()).to_degrees(),
        fx,
        fy,
        cx: c[18],
        cy: c[21],
    };
    CameraRig::new(
        intrinsics,
        Extrinsics {
            rotation,
            translation,
        },
        width,
        height,
    )
}

/// On-disk camera record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fov_deg: f64,
    pub distance_m: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "Rt")]
    pub rt: [f64; 12],
    pub width: usize,
    pub height: usize,
}

impl From<&CameraRig> for CameraRecord {
    fn from(rig: &CameraRig) -> Self {
        let k = rig.intrinsics.matrix();
        let rt = rig.extrinsics.matrix();
        Self {
            fov_deg: rig.intrinsics.fov_deg,
            distance_m: rig.distance,
            azimuth_rad: rig.azimuth,
            elevation_rad: rig.elevation,
            k: std::array::from_fn(|i| k[(i / 3, i % 3)]),
            rt: std::array::from_fn(|i| rt[(i / 4, i % 4)]),
            width: rig.width,
            height: rig.height,
        }
    }
}

impl TryFrom<&CameraRecord> for CameraRig {
    type Error = Error;

    fn try_from(rec: &CameraRecord) -> Result<Self> {
        let rotation = Matrix3::from_fn(|r, c| rec.rt[r * 4 + c]);
        let translation = Vec3::new(rec.rt[3], rec.rt[7], rec.rt[11]);
        let orth = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if !(orth < 1e-6) || !(rotation.determinant() > 0.0) {
            return Err(Error::Validation("camera rotation is not a proper rotation".into()));
        }
        let intrinsics = Intrinsics {
            fov_deg: rec.fov_deg,
            fx: rec.k[0],
            fy: rec.k[4],
            cx: rec.k[2],
            cy: rec.k[5],
        };
        let mut rig = CameraRig::new(
            intrinsics,
            Extrinsics {
                rotation,
                translation,
            },
            rec.width,
            rec.height,
        )?;
        rig.azimuth = rec.azimuth_rad;
        rig.elevation = rec.elevation_rad;
        rig.distance = rec.distance_m;
        Ok(rig)
    }
}

pub fn rig_to_json(rig: &CameraRig) -> String {
    crate::json::to_string_pretty(&CameraRecord::from(rig))
}

pub fn rig_from_json(text: &str) -> Result<CameraRig> {
    let rec: CameraRecord = serde_json::from_str(text)
        .map_err(|e| Error::Validation(format!("camera JSON: {e}")))?;
    CameraRig::try_from(&rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fov_90_gives_half_focal() {
        let k = build_intrinsics(90.0).unwrap();
        assert!((k.fx - 0.5).abs() < 1e-15);
        assert_eq!(k.fx, k.fy);
        assert_eq!(k.matrix()[(2, 2)], 1.0);
    }

    #[test]
    fn fov_range_endpoints() {
        // oracle values evaluated independently in double precision
        let f12 = 1.0 / (2.0 * 6f64.to_radians().tan());
        let f27 = 1.0 / (2.0 * 13.5f64.to_radians().tan());
        assert!((build_intrinsics(12.0).unwrap().fx - f12).abs() < 1e-14);
        assert!((build_intrinsics(27.0).unwrap().fy - f27).abs() < 1e-14);
        assert!((f12 - 4.757182227111292).abs() < 1e-12);
        assert!((f27 - 2.0826498850452086).abs() < 1e-12);
    }

    #[test]
    fn bad_fov_rejected() {
        for fov in [0.0, -1.0, 180.0, f64::NAN, f64::INFINITY] {
            assert!(build_intrinsics(fov).is_err());
        }
    }

    #[test]
    fn pixel_matrix_scales_rows() {
        let k = build_intrinsics(20.0).unwrap();
        let kp = k.pixel_matrix(640, 480);
        assert!((kp[(0, 0)] - k.fx * 640.0).abs() < 1e-12);
        assert!((kp[(1, 2)] - 240.0).abs() < 1e-12);
        assert_eq!(kp[(2, 2)], 1.0);
    }

    #[test]
    fn frontal_rig_is_identity() {
        let rig = CameraRig::frontal(20.0, 9, 9).unwrap();
        assert_eq!(rig.extrinsics.rotation, Mat3::identity());
        assert!((rig.center() - Vec3::new(0.0, 0.0, -2.7)).norm() < 1e-15);
        // the general look-at path agrees with the frontal special case
        let la = Extrinsics::look_at_origin(Vec3::new(0.0, 0.0, -2.7));
        assert!((la.rotation - Mat3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn project_origin_hits_principal_point() {
        let rig = CameraRig::frontal(17.0, 10, 10).unwrap();
        let p = project(&rig.projection, &[Vec3::zeros()]);
        assert!(p[0].valid);
        assert!((p[0].uv - Vector2::new(0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn project_offset_point() {
        let rig = CameraRig::frontal(27.0, 10, 10).unwrap();
        let fx = 1.0 / (2.0 * 13.5f64.to_radians().tan());
        let p = project(&rig.projection, &[Vec3::new(0.1, 0.0, 0.0)]);
        assert!((p[0].uv.x - (0.5 + fx * 0.1 / 2.7)).abs() < 1e-14);
        assert!((p[0].uv.y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn behind_camera_flagged() {
        let rig = CameraRig::frontal(20.0, 10, 10).unwrap();
        let p = project(&rig.projection, &[Vec3::new(0.0, 0.0, -5.0), Vec3::new(0.0, 0.0, -2.7)]);
        assert!(!p[0].valid);
        assert!(!p[1].valid);
    }

    #[test]
    fn center_ray_of_odd_grid_is_axis() {
        let rig = CameraRig::frontal(20.0, 7, 7).unwrap();
        let r = rig.ray(3, 3);
        assert!((r.direction - Vec3::z()).norm() < 1e-15);
        let d_cam = rig.extrinsics.rotation * r.direction;
        assert!((d_cam - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn corner_ray_angle_matches_pinhole_oracle() {
        // 2x2 grid at fov 90: pixel centers at u,v = 0.25 / 0.75, so the
        // camera ray is (±0.25/0.5, ±0.25/0.5, 1).
        let rig = CameraRig::frontal(90.0, 2, 2).unwrap();
        for (row, col) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let d = rig.extrinsics.rotation * rig.ray(row, col).direction;
            let expected = (0.5f64 * 0.5 * 2.0).sqrt().atan();
            let angle = d.z.clamp(-1.0, 1.0).acos();
            assert!((angle - expected).abs() < 1e-12);
        }
        let d = rig.ray(0, 0).direction;
        assert!(d.x < 0.0 && d.y < 0.0);
    }

    #[test]
    fn rays_reproject_to_pixel_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CameraSampling {
            width: 13,
            height: 11,
            ..Default::default()
        };
        for _ in 0..5 {
            let rig = sample_camera(&mut rng, &cfg).unwrap();
            for ray in generate_rays(&rig) {
                assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
                let (u, v) = rig.pixel_center(ray.pixel.0, ray.pixel.1);
                for s in [0.5, 1.0, 3.0] {
                    let p = project(&rig.projection, &[ray.at(s)])[0];
                    assert!(p.valid);
                    assert!((p.uv.x - u).abs() < 1e-6 && (p.uv.y - v).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn sampled_rigs_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [AngleMode::Truncnorm, AngleMode::Uniform] {
            let cfg = CameraSampling {
                mode,
                ..Default::default()
            };
            for _ in 0..500 {
                let rig = sample_camera(&mut rng, &cfg).unwrap();
                let r = rig.extrinsics.rotation;
                assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-9);
                assert!((r.determinant() - 1.0).abs() < 1e-9);
                assert!((rig.center().norm() - 2.7).abs() < 1e-9);
                assert_eq!(rig.distance, 2.7);
                assert!(rig.azimuth.abs() <= MAX_ANGLE_RAD);
                assert!(rig.elevation.abs() <= MAX_ANGLE_RAD);
                let p = rig.intrinsics.matrix() * rig.extrinsics.matrix();
                assert!((p - rig.projection).abs().max() < 1e-12);
                // stored angles agree with the geometric camera center
                let c = rig.center();
                assert!((c.x.atan2(-c.z) - rig.azimuth).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = CameraSampling::default();
        let a = sample_camera(&mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
        let b = sample_camera(&mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
        assert_eq!(rig_to_json(&a), rig_to_json(&b));
        let mut distinct = std::collections::HashSet::new();
        for seed in 0..100u64 {
            let r = sample_camera(&mut ChaCha8Rng::seed_from_u64(seed), &cfg).unwrap();
            distinct.insert(rig_to_json(&r));
        }
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn conditioning_round_trip() {
        let rig = sample_camera(&mut ChaCha8Rng::seed_from_u64(5), &CameraSampling::default()).unwrap();
        let c = flatten_conditioning(&rig);
        assert_eq!(&c[12..16], &[0.0, 0.0, 0.0, 1.0]);
        let k = rig.intrinsics.matrix();
        for i in 0..9 {
            assert_eq!(c[16 + i], k[(i / 3, i % 3)]);
        }
        let back = unflatten_conditioning(&c, rig.width, rig.height).unwrap();
        assert_eq!(back.extrinsics, rig.extrinsics);
        assert_eq!(back.intrinsics.matrix(), rig.intrinsics.matrix());
        assert_eq!(back.projection, rig.projection);
        assert_eq!(flatten_conditioning(&back), c);
        assert!((back.intrinsics.fov_deg - rig.intrinsics.fov_deg).abs() < 1e-12);
        assert!((back.azimuth - rig.azimuth).abs() < 1e-12);
        assert!((back.elevation - rig.elevation).abs() < 1e-12);
    }

    #[test]
    fn frontal_conditioning_layout() {
        let rig = CameraRig::frontal(20.0, 4, 4).unwrap();
        let c = flatten_conditioning(&rig);
        let expected = [
            1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.7, 0.0, 0.0, 0.0, 1.0,
        ];
        assert_eq!(&c[..16], &expected);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rig = sample_camera(&mut ChaCha8Rng::seed_from_u64(9), &CameraSampling::default()).unwrap();
        let text = rig_to_json(&rig);
        assert!(text.contains("\"fov_deg\""));
        assert!(text.contains("\"Rt\""));
        let back = rig_from_json(&text).unwrap();
        assert_eq!(back, rig);
        assert_eq!(rig_to_json(&back), text);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let rig = CameraRig::frontal(20.0, 4, 4).unwrap();
        let text = rig_to_json(&rig).replacen("\"width\"", "\"widht\"", 1);
        assert!(rig_from_json(&text).is_err());
    }
}
