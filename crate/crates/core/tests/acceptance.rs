//! End-to-end acceptance criteria, one line of output per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthface::align::{chamfer, optimize_alignment, AlignConfig};
use synthface::camera::{sample_camera, CameraRig, CameraSampling, Ray};
use synthface::dataset::{generate_dataset, sample_hidden_transform, DatasetConfig, HiddenTransform, Resolution};
use synthface::geometry::ray_triangle;
use synthface::headmodel::{builtin_head, mesh_to_density, sample_params, synthesize_mesh};
use synthface::losses::{
    cross_entropy_seg, l1_depth, l2_keypoints, ssl_loss, task_loss, AffineWarp, BlurEncoder, FeatureMap,
    IdentityEncoder, PerTask, PointwiseEncoder,
};
use synthface::raster::rasterize;
use synthface::volume::{quadrature_depth, render_depth_map, MarchConfig, SlabField};
use synthface::Vec3;

struct Outcome {
    passed: bool,
    /// Precondition of the criterion not met by this host; reported, not asserted.
    host_limited: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, host_limited: false, detail }
}

/// Normalized expected depth by direct midpoint integration of
/// `∫ t σ(t) T(t) dt / ∫ σ(t) T(t) dt` with `n` samples.
fn fine_slab_depth(lo: f64, hi: f64, sigma: f64, t0: f64, t1: f64, n: usize) -> f64 {
    let dt = (t1 - t0) / n as f64;
    let (mut num, mut den, mut tau) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let t = t0 + (i as f64 + 0.5) * dt;
        let s = if (lo..=hi).contains(&t) { sigma } else { 0.0 };
        let w = s * (-(tau + 0.5 * s * dt)).exp() * dt;
        num += t * w;
        den += w;
        tau += s * dt;
    }
    num / den
}

fn c1_depth_quadrature() -> Outcome {
    let oracle = fine_slab_depth(1.0, 1.2, 50.0, 0.0, 3.0, 1_000_000);
    let ray = Ray { origin: Vec3::zeros(), direction: Vec3::z(), pixel: (0, 0) };
    let err = |n: usize| {
        let cfg = MarchConfig { t_near: 0.0, t_far: 3.0, n_samples: n, ..Default::default() };
        (quadrature_depth(&SlabField::along_z(1.0, 1.2, 50.0), &ray, &cfg).unwrap().depth - oracle).abs()
    };
    let (e1, e2) = (err(512), err(1024));
    let ratio = e1 / e2;
    let ok = e1 < 2e-2 && (2.0 / 3.0..=6.0).contains(&ratio);
    outcome(ok, format!("N=512 error {e1:.3e} m, N=1024 error {e2:.3e} m, ratio {ratio:.2}"))
}

fn c2_raster_raycast() -> Outcome {
    let mesh = builtin_head(10, 10, 4).neutral_mesh();
    let rig = CameraRig::frontal(20.0, 64, 64).unwrap();
    let r = rasterize(&mesh, &rig);
    let (mut covered, mut good) = (0usize, 0usize);
    for row in 0..64 {
        for col in 0..64 {
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
            good += usize::from((oracle - z).abs() <= 1e-4);
        }
    }
    let frac = good as f64 / covered.max(1) as f64;
    outcome(covered > 0 && frac >= 0.99, format!("{good}/{covered} covered pixels within 1e-4 m ({:.2}%)", 100.0 * frac))
}

fn c3_cross_renderer() -> Outcome {
    let asset = builtin_head(10, 10, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let sampling = CameraSampling { width: 128, height: 128, ..Default::default() };
    let mut cases = vec![(asset.neutral_mesh(), CameraRig::frontal(20.0, 128, 128).unwrap())];
    for _ in 0..2 {
        let p = sample_params(&mut rng, 10, 10, 0);
        cases.push((synthesize_mesh(&asset, &p).unwrap(), sample_camera(&mut rng, &sampling).unwrap()));
    }
    let mut worst: f64 = 1.0;
    let mut parts = Vec::new();
    for (mesh, rig) in &cases {
        let field = mesh_to_density(mesh, 0.01, 400.0).unwrap();
        let vol = render_depth_map(&field, rig, &MarchConfig::default()).unwrap();
        let ras = rasterize(mesh, rig).depth;
        let (mut joint, mut close) = (0usize, 0usize);
        for i in 0..vol.values().len() {
            if let (Some(a), Some(b)) = (vol.at(i), ras.at(i)) {
                joint += 1;
                close += usize::from((a - b).abs() <= 0.02);
            }
        }
        let frac = close as f64 / joint.max(1) as f64;
        worst = worst.min(if joint == 0 { 0.0 } else { frac });
        parts.push(format!("{close}/{joint}"));
    }
    outcome(worst >= 0.9, format!("agreement within 0.02 m: {} (worst {:.1}%)", parts.join(", "), 100.0 * worst))
}

fn c4_alignment_recovery() -> Outcome {
    let mesh = builtin_head(10, 10, 4).neutral_mesh();
    let rig = CameraRig::frontal(20.0, 64, 64).unwrap();
    let cfg = AlignConfig::default();
    let magnitude = HiddenTransform { scale_max: 0.1, rot_max_deg: 10.0, trans_max_m: 0.1 };
    let mut errors = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = sample_hidden_transform(&mut rng, &magnitude);
        let field = mesh_to_density(&hidden.apply_mesh(&mesh), 0.004, 1000.0).unwrap();
        let (ta, _) = optimize_alignment(&mesh, &field, &rig, &cfg).unwrap();
        let err = mesh.vertices.iter().map(|v| (ta.apply(v) - hidden.apply(v)).norm()).sum::<f64>()
            / mesh.vertices.len() as f64;
        errors.push(err);
    }
    let ok = errors.iter().filter(|&&e| e < 5e-3).count();
    let max = errors.iter().copied().fold(0.0, f64::max);
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    outcome(ok >= 18, format!("{ok}/20 below 5 mm (mean {:.2} mm, max {:.2} mm)", 1e3 * mean, 1e3 * max))
}

fn c5_chamfer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut cloud = || -> Vec<Vec3> {
            (0..200).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
        };
        let (a, b) = (cloud(), cloud());
        let one_way = |p: &[Vec3], q: &[Vec3]| -> f64 {
            p.iter().map(|x| q.iter().map(|y| (x - y).norm_squared()).fold(f64::INFINITY, f64::min)).sum()
        };
        let brute = one_way(&a, &b) + one_way(&b, &a);
        worst = worst.max((chamfer(&a, &b).unwrap() - brute).abs());
    }
    outcome(worst <= 1e-9, format!("max |index − brute force| {worst:.2e} over 100 pairs"))
}

fn c6_ssl_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let x = FeatureMap::new(3, 24, 24, (0..3 * 24 * 24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut id_worst = 0.0f64;
    for _ in 0..10 {
        let (s, c) = rng.random_range(-0.6f64..0.6).sin_cos();
        let (kx, ky) = (rng.random_range(0.8..1.2), rng.random_range(0.8..1.2));
        let shear = rng.random_range(-0.1..0.1);
        let eps = AffineWarp::new([
            [kx * c, -s + shear, rng.random_range(-0.3..0.3)],
            [s, ky * c, rng.random_range(-0.3..0.3)],
        ])
        .unwrap();
        id_worst = id_worst.max(ssl_loss(&IdentityEncoder, &x, &eps).unwrap().value);
    }
    let enc = PointwiseEncoder {
        weights: vec![vec![0.3, -0.7, 1.1], vec![-0.2, 0.5, 0.9], vec![1.0, 0.0, -1.0], vec![0.4, 0.4, 0.4]],
        bias: vec![0.05, -0.1, 0.0, 0.2],
        tanh: true,
    };
    let mut pw_worst = 0.0f64;
    for (dx, dy) in [(1.0, 0.0), (-2.0, 3.0), (4.0, -1.0)] {
        pw_worst = pw_worst.max(ssl_loss(&enc, &x, &AffineWarp::pixel_translation(dx, dy, 24, 24)).unwrap().value);
    }
    let blur = ssl_loss(&BlurEncoder, &x, &AffineWarp::rotation_deg(30.0)).unwrap().value;
    let ok = id_worst <= 1e-6 && pw_worst <= 1e-6 && blur > 0.0;
    outcome(ok, format!("identity max {id_worst:.1e}, pointwise+translation max {pw_worst:.1e}, blur+30° {blur:.3e}"))
}

fn c7_loss_oracles() -> Outcome {
    // two samples, tabulated by hand
    let losses = [PerTask::new(0.7, 0.2, 1.5), PerTask::new(0.3, 0.9, 0.4)];
    let weights = [PerTask::new(1.0, 0.5, 2.0), PerTask::new(2.0, 1.0, 0.25)];
    let sum_oracle = (0.7 * 1.0 + 0.2 * 0.5 + 1.5 * 2.0 + 0.3 * 2.0 + 0.9 * 1.0 + 0.4 * 0.25) / 2.0;
    let e_sum = (task_loss(&losses, &weights).unwrap() - sum_oracle).abs();

    // logits: pixel 0 = (2, 0, −1), pixel 1 = (0.5, 0.5, 1.5); labels 0 and 2
    let logits = FeatureMap::new(3, 1, 2, vec![2.0, 0.5, 0.0, 0.5, -1.0, 1.5]).unwrap();
    let ce0 = -(2f64.exp() / (2f64.exp() + 1.0 + (-1f64).exp())).ln();
    let ce1 = -(1.5f64.exp() / (2.0 * 0.5f64.exp() + 1.5f64.exp())).ln();
    let e_ce = (cross_entropy_seg(&logits, &[0, 2], None).unwrap().value - (ce0 + ce1) / 2.0).abs();

    let e_l1 = (l1_depth(&[1.25, 2.0], &[1.0, 2.5], None).unwrap().value - (0.25 + 0.5) / 2.0).abs();
    let l2_oracle = ((0.6f64 * 0.6 + 0.8 * 0.8).sqrt() + (1.5f64 * 1.5 + 2.0 * 2.0).sqrt()) / 2.0;
    let e_l2 = (l2_keypoints(&[[0.0, 0.0], [3.0, 1.0]], &[[0.6, 0.8], [1.5, 3.0]], &[true, true]).unwrap().value - l2_oracle).abs();

    let worst = [e_sum, e_ce, e_l1, e_l2].into_iter().fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("errors: task sum {e_sum:.1e}, CE {e_ce:.1e}, L1 {e_l1:.1e}, L2 {e_l2:.1e}"))
}

fn c8_dataset_determinism() -> Outcome {
    let mut cfg = DatasetConfig { n_samples: 10, master_seed: 8, resolution: Resolution::Square(256), ..Default::default() };
    cfg.hidden_transform = HiddenTransform { scale_max: 0.05, rot_max_deg: 5.0, trans_max_m: 0.05 };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ma, _) = generate_dataset(&cfg, a.path(), Some(1)).unwrap();
    let (mb, _) = generate_dataset(&cfg, b.path(), Some(8)).unwrap();
    let fa = std::fs::read(a.path().join("manifest.json")).unwrap();
    let fb = std::fs::read(b.path().join("manifest.json")).unwrap();
    let files: usize = ma.samples.iter().map(|s| s.files.len()).sum();
    outcome(fa == fb && ma == mb, format!("{} samples, {files} file digests, manifests identical: {}", ma.samples.len(), fa == fb))
}

fn c9_throughput() -> Outcome {
    let cfg = DatasetConfig {
        n_samples: 16,
        master_seed: 9,
        resolution: Resolution::Square(256),
        alignment: false,
        rgb: false,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    generate_dataset(&cfg, dir.path(), None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let rate = cfg.n_samples as f64 / secs;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!("{rate:.2} samples/s on {cores} core(s) ({:.2} samples/s per core), target 4 samples/s on 8 cores", rate / cores as f64);
    Outcome { passed: rate >= 4.0, host_limited: cores < 8, detail }
}

fn c10_distributions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params_ok = (0..10_000).all(|_| {
        let p = sample_params(&mut rng, 10, 10, 6);
        p.beta.iter().chain(&p.psi).chain(&p.theta).all(|&x| x > -2.0 && x < 2.0)
    });
    let cfg = CameraSampling::default();
    let (mut fov, mut dist, mut ang) = ((f64::INFINITY, f64::NEG_INFINITY), 0.0f64, 0.0f64);
    let mut rigs_ok = true;
    for _ in 0..10_000 {
        let r = sample_camera(&mut rng, &cfg).unwrap();
        let f = r.intrinsics.fov_deg;
        fov = (fov.0.min(f), fov.1.max(f));
        dist = dist.max((r.center().norm() - 2.7).abs()).max((r.distance - 2.7).abs());
        ang = ang.max(r.azimuth.abs()).max(r.elevation.abs());
        rigs_ok &= (12.0..=27.0).contains(&f) && r.azimuth.abs() <= std::f64::consts::FRAC_PI_4 && r.elevation.abs() <= std::f64::consts::FRAC_PI_4;
    }
    rigs_ok &= dist < 1e-9;
    outcome(
        params_ok && rigs_ok,
        format!("params in (−2, 2): {params_ok}; fov [{:.2}°, {:.2}°], max |distance − 2.7| {dist:.1e}, max |angle| {ang:.4} rad", fov.0, fov.1),
    )
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        (1, "depth quadrature oracle", Duration::from_secs(1), c1_depth_quadrature),
        (2, "rasterizer vs raycast", Duration::from_secs(5), c2_raster_raycast),
        (3, "volumetric vs rasterized depth", Duration::from_secs(30), c3_cross_renderer),
        (4, "alignment recovery", Duration::from_secs(300), c4_alignment_recovery),
        (5, "chamfer oracle", Duration::from_secs(5), c5_chamfer_oracle),
        (6, "warp equivariance suite", Duration::from_secs(10), c6_ssl_equivariance),
        (7, "loss formula oracles", Duration::from_secs(1), c7_loss_oracles),
        (8, "dataset determinism", Duration::from_secs(120), c8_dataset_determinism),
        (9, "throughput budget", Duration::MAX, c9_throughput),
        (10, "parameter and camera distributions", Duration::from_secs(10), c10_distributions),
    ];
    let mut failures = Vec::new();
    for (id, name, budget, run) in criteria {
        let t = Instant::now();
        let o = run();
        let elapsed = t.elapsed();
        let in_time = elapsed <= budget;
        let passed = o.passed && in_time;
        let budget_text = if budget == Duration::MAX { String::new() } else { format!(" / {:.0?}", budget) };
        let note = match (passed, o.host_limited) {
            (false, true) => " [host below the criterion's 8-core precondition; not asserted]",
            _ => "",
        };
        println!(
            "criterion {id:>2} {}: {name}: {}; {:.2?}{budget_text}{note}",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed
        );
        if !passed && !o.host_limited {
            failures.push(id);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
