use std::path::Path;
use std::process::{Command, Output};

use synthface::align::AffineParams;
use synthface::camera::{rig_to_json, CameraRig};
use synthface::headmodel::{builtin_head, mesh_to_density};
use synthface::raster::{ClassMap, DepthMap};
use synthface::volume::{write_dvox, DensityField, VoxelGrid};
use synthface::Vec3;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthface")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--resolution",
    "32x32",
    "--set",
    "march.n_samples=96",
    "--set",
    "align.resolution=24",
    "--set",
    "align.march.n_samples=128",
    "--set",
    r#"asset={"builtin":{"n_beta":4,"n_psi":4,"subdivision":3}}"#,
];

fn generate(out: &Path, n: usize, threads: usize) -> Output {
    let n = n.to_string();
    let threads = threads.to_string();
    let mut args = vec!["generate", "--out", out.to_str().unwrap(), "--n", &n, "--threads", &threads, "--seed", "1"];
    args.extend_from_slice(SMALL);
    run(&args)
}

#[test]
fn help_documents_every_flag() {
    let o = run(&["generate", "--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--set", "--out", "--threads", "--json", "--seed", "--n", "--resolution"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    assert_eq!(run(&["generate", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn generate_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate(dir.path(), 3, 2);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("samples/s"));
    assert!(dir.path().join("manifest.json").exists());

    let o = run(&["inspect", dir.path().to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n_samples"], 3);

    // builtin default asset has more coefficients, but the class table and
    // landmark count are the same
    let seg = dir.path().join("00000001").join("seg.pgm");
    let mut bytes = std::fs::read(&seg).unwrap();
    let mid = bytes.len() - 100;
    bytes[mid] ^= 0x01;
    std::fs::write(&seg, &bytes).unwrap();
    let o = run(&["inspect", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seg.pgm"), "{}", stderr(&o));
}

#[test]
fn invalid_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"n_samples": 2, "no_such_key": 1}"#).unwrap();
    let o = run(&["generate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));

    let o = run(&["generate", "--out", dir.path().join("o").to_str().unwrap(), "--set", "n_samples=many"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("o").join("manifest.json").exists());
}

#[test]
fn thread_counts_give_identical_manifests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(generate(a.path(), 4, 1).status.success());
    assert!(generate(b.path(), 4, 8).status.success());
    let ma = std::fs::read(a.path().join("manifest.json")).unwrap();
    let mb = std::fs::read(b.path().join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn render_writes_valid_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["render", "--resolution", "64", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seg_path = dir.path().join("seg.pgm");
    let seg = ClassMap::decode_pgm(&std::fs::read(&seg_path).unwrap(), &seg_path).unwrap();
    assert_eq!((seg.width, seg.height), (64, 64));
    seg.validate(&builtin_head(0, 0, 1).topology.class_table).unwrap();
    assert!(seg.covered_fraction() > 0.05);
    let depth_path = dir.path().join("depth_mesh.pfm");
    let bytes = std::fs::read(&depth_path).unwrap();
    let depth = DepthMap::decode_pfm(&bytes, &depth_path).unwrap();
    assert_eq!(depth.encode_pfm(), bytes);
    assert!(depth.valid_count() > 0);
    let lm: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("landmarks.json")).unwrap()).unwrap();
    assert_eq!(lm.as_array().unwrap().len(), 68);
}

/// Writes a DVOX grid of the builtin neutral head moved by `t`, plus a
/// frontal camera.
fn align_fixture(dir: &Path, t: &AffineParams) -> (String, String) {
    let mesh = t.apply_mesh(&builtin_head(10, 10, 4).neutral_mesh());
    let field = mesh_to_density(&mesh, 0.01, 400.0).unwrap();
    let bounds = field.bounds().expanded(0.02);
    let extent = bounds.max - bounds.min;
    let voxel = 0.004;
    let dims = [0, 1, 2].map(|i| (extent[i] / voxel).ceil() as usize + 1);
    let grid = VoxelGrid::from_field(&field, dims, &bounds).unwrap();
    let dvox = dir.join("head.dvox");
    write_dvox(&grid, &dvox).unwrap();
    let cam = dir.join("camera.json");
    std::fs::write(&cam, rig_to_json(&CameraRig::frontal(20.0, 64, 64).unwrap())).unwrap();
    (dvox.to_str().unwrap().to_string(), cam.to_str().unwrap().to_string())
}

#[test]
fn align_self_aligned_converges() {
    let dir = tempfile::tempdir().unwrap();
    let (dvox, cam) = align_fixture(dir.path(), &AffineParams::identity());
    let out = dir.path().join("out");
    let o = run(&["align", "--dvox", &dvox, "--camera", &cam, "--out", out.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["converged"], true);
    assert!(v["total_loss"].as_f64().unwrap() <= v["initial_loss"].as_f64().unwrap());
    assert!(out.join("align.json").exists());
}

#[test]
fn align_recovers_fixture_transform() {
    let dir = tempfile::tempdir().unwrap();
    let hidden = AffineParams {
        a: nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), 4f64.to_radians()).matrix() * 1.04,
        b: Vec3::new(0.02, -0.015, 0.01),
    };
    let (dvox, cam) = align_fixture(dir.path(), &hidden);
    let out = dir.path().join("out");
    let o = run(&["align", "--dvox", &dvox, "--camera", &cam, "--out", out.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let t: Vec<f64> = v["transform"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let got = AffineParams::from_array(&t.try_into().unwrap());
    let mesh = builtin_head(10, 10, 4).neutral_mesh();
    let err = mesh.vertices.iter().map(|p| (got.apply(p) - hidden.apply(p)).norm()).sum::<f64>() / mesh.vertices.len() as f64;
    assert!(err < 1e-2, "mean vertex error {err}");
}

#[test]
fn align_rejects_bad_dvox() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cam) = align_fixture(dir.path(), &AffineParams::identity());
    let bad = dir.path().join("bad.dvox");
    std::fs::write(&bad, b"NOPE0000000000000000").unwrap();
    let o = run(&["align", "--dvox", bad.to_str().unwrap(), "--camera", &cam, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.dvox"), "{}", stderr(&o));
}

#[test]
fn selfchecks_pass() {
    let o = run(&["selfcheck", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["failed"], 0);
    let o = run(&["losses", "selfcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("0 failed"));
    assert_eq!(run(&["selfcheck", "--suite", "nope"]).status.code(), Some(2));
}
