//! Invariant suites runnable outside the test harness.
//!
//! Every check is deterministic and sized to finish in seconds.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::align::{chamfer, fit_affine, AffineParams};
use crate::camera::{sample_camera, CameraRig, CameraSampling, Ray, MAX_FOV_DEG, MIN_FOV_DEG};
use crate::dataset::{generate_sample, AssetSource, DatasetConfig, Resolution};
use crate::geometry::ray_triangle;
use crate::headmodel::{builtin_head, sample_params};
use crate::losses::{
    cross_entropy_seg, l1_depth, l2_keypoints, ssl_loss, task_loss, AffineWarp, BlurEncoder, FeatureMap,
    IdentityEncoder, PerTask, PointwiseEncoder,
};
use crate::raster::{rasterize, DepthMap};
use crate::volume::{decode_dvox, encode_dvox, quadrature_depth, MarchConfig, SlabField, VoxelGrid};
use crate::{Result, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfcheckReport {
    pub suites: Vec<SuiteReport>,
    pub passed: usize,
    pub failed: usize,
}

impl SelfcheckReport {
    pub fn new(suites: Vec<SuiteReport>) -> Self {
        let passed = suites.iter().map(SuiteReport::passed).sum();
        let failed = suites.iter().map(SuiteReport::failed).sum();
        Self { suites, passed, failed }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for suite in &self.suites {
            for c in &suite.checks {
                let mark = if c.passed { "pass" } else { "FAIL" };
                s.push_str(&format!("{mark}  {}/{}  {}  ({:.2}s)\n", suite.suite, c.name, c.detail, c.seconds));
            }
        }
        s.push_str(&format!("{} passed, {} failed\n", self.passed, self.failed));
        s
    }
}

type Check = (&'static str, fn() -> Result<(bool, String)>);

fn run_suite(name: &str, checks: &[Check]) -> SuiteReport {
    let checks = checks
        .iter()
        .map(|(n, f)| {
            let t = Instant::now();
            let (passed, detail) = match f() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult { name: n.to_string(), passed, detail, seconds: t.elapsed().as_secs_f64() }
        })
        .collect();
    SuiteReport { suite: name.to_string(), checks }
}

/// Every suite.
pub fn run_all() -> SelfcheckReport {
    SelfcheckReport::new(vec![camera_suite(), raster_suite(), volume_suite(), align_suite(), losses_suite(), dataset_suite()])
}

pub fn camera_suite() -> SuiteReport {
    run_suite(
        "camera",
        &[
            ("sampled_ranges", || {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let cfg = CameraSampling::default();
                let mut bad = 0;
                for _ in 0..2000 {
                    let r = sample_camera(&mut rng, &cfg)?;
                    let fov = r.intrinsics.fov_deg;
                    let ok = (MIN_FOV_DEG..=MAX_FOV_DEG).contains(&fov)
                        && (r.distance - 2.7).abs() < 1e-12
                        && (r.center().norm() - 2.7).abs() < 1e-9
                        && r.azimuth.abs() <= std::f64::consts::FRAC_PI_4
                        && r.elevation.abs() <= std::f64::consts::FRAC_PI_4;
                    bad += usize::from(!ok);
                }
                Ok((bad == 0, format!("{bad}/2000 rigs out of range")))
            }),
            ("pixel_ray_reprojects", || {
                let rig = CameraRig::orbit(20.0, 0.4, -0.3, 2.7, 40, 30)?;
                let mut worst = 0.0f64;
                for row in (0..30).step_by(7) {
                    for col in (0..40).step_by(7) {
                        let ray = rig.ray(row, col);
                        let p = ray.at(2.5);
                        let h = rig.projection * p.push(1.0);
                        let (u, v) = (h.x / h.z, h.y / h.z);
                        let (pu, pv) = rig.pixel_center(row, col);
                        worst = worst.max((u - pu).abs()).max((v - pv).abs());
                    }
                }
                Ok((worst < 1e-9, format!("max reprojection error {worst:.1e}")))
            }),
            ("params_in_open_box", || {
                let mut rng = ChaCha8Rng::seed_from_u64(2);
                let all = (0..1000).all(|_| {
                    let p = sample_params(&mut rng, 10, 10, 6);
                    p.beta.iter().chain(&p.psi).chain(&p.theta).all(|x| x.abs() < 2.0)
                });
                Ok((all, "1000 draws".into()))
            }),
        ],
    )
}

pub fn raster_suite() -> SuiteReport {
    run_suite(
        "raster",
        &[("matches_raycast", || {
            let mesh = builtin_head(0, 0, 3).neutral_mesh();
            let rig = CameraRig::frontal(20.0, 32, 32)?;
            let r = rasterize(&mesh, &rig);
            let (mut covered, mut good) = (0usize, 0usize);
            for row in 0..32 {
                for col in 0..32 {
                    let Some(z) = r.depth.get(row, col) else { continue };
                    covered += 1;
                    let ray = rig.ray(row, col);
                    let t = (0..mesh.faces().len())
                        .filter_map(|f| {
                            let [a, b, c] = mesh.triangle(f);
                            ray_triangle(&ray.origin, &ray.direction, &a, &b, &c).map(|h| h.0)
                        })
                        .fold(f64::INFINITY, f64::min);
                    let oracle = t * (rig.extrinsics.rotation * ray.direction).z;
                    good += usize::from((oracle - z).abs() < 1e-4);
                }
            }
            Ok((covered > 0 && good as f64 >= 0.99 * covered as f64, format!("{good}/{covered} pixels within 1e-4 m")))
        })],
    )
}

/// Normalized expected depth of a constant slab `[a, b]` along the ray.
fn slab_depth_closed_form(a: f64, b: f64, sigma: f64) -> f64 {
    let l = b - a;
    let e = (-sigma * l).exp();
    a + 1.0 / sigma - l * e / (1.0 - e)
}

pub fn volume_suite() -> SuiteReport {
    run_suite(
        "volume",
        &[
            ("slab_depth", || {
                let ray = Ray { origin: Vec3::zeros(), direction: Vec3::z(), pixel: (0, 0) };
                let cfg = MarchConfig { t_near: 0.0, t_far: 3.0, n_samples: 512, ..Default::default() };
                let d = quadrature_depth(&SlabField::along_z(1.0, 1.2, 50.0), &ray, &cfg)?.depth;
                let want = slab_depth_closed_form(1.0, 1.2, 50.0);
                let err = (d - want).abs();
                Ok((err < 2e-2, format!("error {err:.2e} m")))
            }),
            ("dvox_round_trip", || {
                let data: Vec<f32> = (0..4 * 3 * 2).map(|i| i as f32 * 0.5).collect();
                let grid = VoxelGrid::new([4, 3, 2], [-1.0; 3], [1.0, 0.5, 0.0], data)?;
                let bytes = encode_dvox(&grid);
                let back = decode_dvox(&bytes, std::path::Path::new("<memory>"))?;
                Ok((encode_dvox(&back) == bytes, format!("{} bytes", bytes.len())))
            }),
            ("pfm_round_trip", || {
                let d = DepthMap::from_options(3, 2, [Some(1.5), None, Some(2.25), Some(0.1), None, Some(3.0)]).quantized();
                let bytes = d.encode_pfm();
                let back = DepthMap::decode_pfm(&bytes, std::path::Path::new("<memory>"))?;
                Ok((back == d && back.encode_pfm() == bytes, "3x2 map".into()))
            }),
        ],
    )
}

pub fn align_suite() -> SuiteReport {
    run_suite(
        "align",
        &[
            ("chamfer_matches_brute_force", || {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let mut worst = 0.0f64;
                for _ in 0..10 {
                    let mut cloud = |n: usize| -> Vec<Vec3> {
                        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
                    };
                    let (a, b) = (cloud(120), cloud(90));
                    let brute = |p: &[Vec3], q: &[Vec3]| -> f64 {
                        p.iter().map(|x| q.iter().map(|y| (x - y).norm_squared()).fold(f64::INFINITY, f64::min)).sum()
                    };
                    worst = worst.max((chamfer(&a, &b)? - brute(&a, &b) - brute(&b, &a)).abs());
                }
                Ok((worst <= 1e-9, format!("max difference {worst:.1e}")))
            }),
            ("affine_fit_recovers", || {
                let mut rng = ChaCha8Rng::seed_from_u64(4);
                let src: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
                let mut t = AffineParams::identity();
                t.a[(0, 1)] = 0.1;
                t.a[(2, 2)] = 1.05;
                t.b = Vec3::new(0.02, -0.01, 0.03);
                let dst: Vec<Vec3> = src.iter().map(|p| t.apply(p)).collect();
                let fit = fit_affine(&src, &dst)?;
                let err = fit.to_array().iter().zip(t.to_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                Ok((err < 1e-9, format!("max parameter error {err:.1e}")))
            }),
        ],
    )
}

fn rand_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Result<FeatureMap> {
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Task-loss formulas and warp equivariance.
pub fn losses_suite() -> SuiteReport {
    run_suite(
        "losses",
        &[
            ("task_sum_fixture", || {
                let losses = [PerTask::new(0.5, 0.25, 2.0), PerTask::new(1.0, 0.0, 4.0)];
                let weights = [PerTask::new(1.0, 2.0, 0.5), PerTask::new(0.5, 1.0, 0.25)];
                let want = ((0.5 + 0.5 + 1.0) + (0.5 + 0.0 + 1.0)) / 2.0;
                let got = task_loss(&losses, &weights)?;
                Ok(((got - want).abs() <= 1e-9, format!("{got} vs {want}")))
            }),
            ("per_task_fixtures", || {
                let l1 = l1_depth(&[1.0, 2.0, 4.0], &[1.5, 2.0, 1.0], Some(&[true, true, false]))?.value;
                let kp = l2_keypoints(&[[0.0, 0.0], [1.0, 1.0]], &[[3.0, 4.0], [1.0, 2.0]], &[true, true])?.value;
                let logits = FeatureMap::new(2, 1, 2, vec![0.0, 1.0, 1.0, 1.0])?;
                let ce = cross_entropy_seg(&logits, &[1, 0], None)?.value;
                let ce_want = ((1.0 + (-1f64).exp()).ln() + 2f64.ln()) / 2.0;
                let errs = [(l1 - 0.25).abs(), (kp - 3.0).abs(), (ce - ce_want).abs()];
                let worst = errs.iter().fold(0.0f64, |a, b| a.max(*b));
                Ok((worst <= 1e-9, format!("max error {worst:.1e}")))
            }),
            ("identity_encoder_equivariant", || {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let x = rand_map(&mut rng, 3, 16, 16)?;
                let mut worst = 0.0f64;
                for _ in 0..5 {
                    let (s, c) = rng.random_range(-0.5f64..0.5).sin_cos();
                    let k = rng.random_range(0.8..1.2);
                    let eps = AffineWarp::new([
                        [k * c, -s, rng.random_range(-0.2..0.2)],
                        [s, k * c, rng.random_range(-0.2..0.2)],
                    ])?;
                    worst = worst.max(ssl_loss(&IdentityEncoder, &x, &eps)?.value);
                }
                Ok((worst <= 1e-6, format!("max loss {worst:.1e}")))
            }),
            ("pointwise_translation_equivariant", || {
                let mut rng = ChaCha8Rng::seed_from_u64(6);
                let x = rand_map(&mut rng, 3, 16, 16)?;
                let enc = PointwiseEncoder {
                    weights: vec![vec![0.5, -1.0, 0.25], vec![1.0, 1.0, 1.0]],
                    bias: vec![0.1, -0.2],
                    tanh: true,
                };
                let loss = ssl_loss(&enc, &x, &AffineWarp::pixel_translation(2.0, -1.0, 16, 16))?;
                Ok((loss.value <= 1e-6 && loss.count > 0, format!("loss {:.1e} over {} pixels", loss.value, loss.count)))
            }),
            ("blur_rotation_not_equivariant", || {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let x = rand_map(&mut rng, 3, 16, 16)?;
                let loss = ssl_loss(&BlurEncoder, &x, &AffineWarp::rotation_deg(30.0))?.value;
                Ok((loss > 0.0, format!("loss {loss:.3e}")))
            }),
        ],
    )
}

pub fn dataset_suite() -> SuiteReport {
    run_suite(
        "dataset",
        &[("sample_is_deterministic", || {
            let mut cfg = DatasetConfig {
                resolution: Resolution::Square(32),
                asset: AssetSource::Builtin { n_beta: 4, n_psi: 4, subdivision: 3 },
                ..Default::default()
            };
            cfg.march.n_samples = 96;
            cfg.align.resolution = 24;
            cfg.align.march.n_samples = 128;
            let asset = cfg.asset.load()?;
            let a = generate_sample(3, 4, &asset, &cfg)?.encode_files();
            let b = generate_sample(3, 4, &asset, &cfg)?.encode_files();
            Ok((a == b, format!("{} files", a.len())))
        })],
    )
}
