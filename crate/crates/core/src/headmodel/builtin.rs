//! Procedural head used when no external asset is supplied.
//!
//! The surface is a subdivided icosphere pushed onto an ellipsoid that
//! narrows toward the jaw, with a few radial bumps (nose, lips, eye sockets,
//! ears). The face looks toward −z, y is up
//! and the subject's right is +x. Regions and landmarks are placed in
//! (longitude, latitude) about the facing direction, where
//! `lon = atan2(x, −z)` and `lat = asin(y)` on the unit direction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Basis, ClassTable, ClassTexture, LandmarkBinding, TemplateAsset, Topology};
use crate::geometry::ray_triangle;
use crate::Vec3;

/// Ellipsoid semi-axes in meters (x, y, z).
const SEMI_AXES: [f64; 3] = [0.19, 0.25, 0.22];
const TEXTURE_SIZE: usize = 256;
const SHAPE_SEED: u64 = 0x5eed_0001;
const EXPR_SEED: u64 = 0x5eed_0002;
const SHAPE_AMPLITUDE: f64 = 0.004;
const EXPR_AMPLITUDE: f64 = 0.003;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum BuiltinClass {
    Skin = 1,
    Nose = 2,
    LeftEye = 3,
    RightEye = 4,
    UpperLip = 5,
    LowerLip = 6,
    LeftBrow = 7,
    RightBrow = 8,
}

pub const BUILTIN_CLASSES: [(BuiltinClass, &str); 8] = [
    (BuiltinClass::Skin, "skin"),
    (BuiltinClass::Nose, "nose"),
    (BuiltinClass::LeftEye, "left_eye"),
    (BuiltinClass::RightEye, "right_eye"),
    (BuiltinClass::UpperLip, "upper_lip"),
    (BuiltinClass::LowerLip, "lower_lip"),
    (BuiltinClass::LeftBrow, "left_brow"),
    (BuiltinClass::RightBrow, "right_brow"),
];

struct Bump {
    lon: f64,
    lat: f64,
    sigma: f64,
    amplitude: f64,
}

const BUMPS: [Bump; 7] = [
    // nose
    Bump { lon: 0.0, lat: -0.03, sigma: 0.13, amplitude: 0.16 },
    // eye sockets
    Bump { lon: 0.32, lat: 0.17, sigma: 0.09, amplitude: -0.035 },
    Bump { lon: -0.32, lat: 0.17, sigma: 0.09, amplitude: -0.035 },
    // lips
    Bump { lon: 0.0, lat: -0.31, sigma: 0.1, amplitude: 0.03 },
    // chin
    Bump { lon: 0.0, lat: -0.5, sigma: 0.15, amplitude: 0.03 },
    // ears
    Bump { lon: 1.57, lat: 0.0, sigma: 0.12, amplitude: 0.08 },
    Bump { lon: -1.57, lat: 0.0, sigma: 0.12, amplitude: 0.08 },
];

/// Relative width change per unit of `dir.y`: wide cranium, narrow jaw.
const TAPER: f64 = 0.15;

fn lon_lat(dir: &Vec3) -> (f64, f64) {
    (dir.x.atan2(-dir.z), dir.y.clamp(-1.0, 1.0).asin())
}

fn from_lon_lat(lon: f64, lat: f64) -> Vec3 {
    Vec3::new(lat.cos() * lon.sin(), lat.sin(), -lat.cos() * lon.cos())
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn surface_point(dir: &Vec3) -> Vec3 {
    let mut scale = 1.0;
    for b in &BUMPS {
        let ang = angle_between(dir, &from_lon_lat(b.lon, b.lat));
        scale += b.amplitude * (-(ang * ang) / (2.0 * b.sigma * b.sigma)).exp();
    }
    let width = 1.0 + TAPER * dir.y;
    Vec3::new(dir.x * SEMI_AXES[0] * width, dir.y * SEMI_AXES[1], dir.z * SEMI_AXES[2]) * scale
}

fn ellipsoid_normal(dir: &Vec3) -> Vec3 {
    Vec3::new(dir.x / SEMI_AXES[0], dir.y / SEMI_AXES[1], dir.z / SEMI_AXES[2]).normalize()
}

/// Unit icosphere: directions and outward-wound faces.
fn icosphere(subdivision: usize) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivision {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn spherical_uv(dir: &Vec3) -> Vector2<f64> {
    let (lon, _) = lon_lat(dir);
    let polar = dir.y.clamp(-1.0, 1.0).acos();
    Vector2::new(0.5 + lon / (2.0 * PI), 1.0 - polar / PI)
}

fn face_uvs(dirs: &[Vec3], face: &[u32; 3]) -> [Vector2<f64>; 3] {
    let mut uv = face.map(|i| spherical_uv(&dirs[i as usize]));
    let max_u = uv.iter().map(|c| c.x).fold(f64::MIN, f64::max);
    let min_u = uv.iter().map(|c| c.x).fold(f64::MAX, f64::min);
    if max_u - min_u > 0.5 {
        // face straddles the seam at the back of the head
        for c in uv.iter_mut() {
            if c.x < 0.5 {
                c.x = 1.0;
            }
        }
    }
    uv
}

fn in_ellipse(lon: f64, lat: f64, c_lon: f64, c_lat: f64, r_lon: f64, r_lat: f64) -> bool {
    let a = (lon - c_lon) / r_lon;
    let b = (lat - c_lat) / r_lat;
    a * a + b * b <= 1.0
}

fn region_at(lon: f64, lat: f64) -> BuiltinClass {
    use BuiltinClass::*;
    if in_ellipse(lon, lat, 0.32, 0.17, 0.13, 0.06) {
        RightEye
    } else if in_ellipse(lon, lat, -0.32, 0.17, 0.13, 0.06) {
        LeftEye
    } else if in_ellipse(lon, lat, 0.32, 0.32, 0.17, 0.04) {
        RightBrow
    } else if in_ellipse(lon, lat, -0.32, 0.32, 0.17, 0.04) {
        LeftBrow
    } else if in_ellipse(lon, lat, 0.0, 0.02, 0.1, 0.16) {
        Nose
    } else if in_ellipse(lon, lat, 0.0, -0.27, 0.2, 0.035) {
        UpperLip
    } else if in_ellipse(lon, lat, 0.0, -0.34, 0.17, 0.035) {
        LowerLip
    } else {
        Skin
    }
}

fn class_texture() -> ClassTexture {
    let n = TEXTURE_SIZE;
    let mut data = vec![0u8; n * n];
    for row in 0..n {
        let v = 1.0 - (row as f64 + 0.5) / n as f64;
        let lat = PI / 2.0 - (1.0 - v) * PI;
        for col in 0..n {
            let u = (col as f64 + 0.5) / n as f64;
            let lon = (u - 0.5) * 2.0 * PI;
            data[row * n + col] = region_at(lon, lat) as u8;
        }
    }
    ClassTexture { width: n, height: n, data }
}

/// iBUG-style 68-point layout as (lon, lat).
fn landmark_sites() -> Vec<(f64, f64)> {
    let mut sites = Vec::with_capacity(68);
    // jaw 0-16, subject's right ear to left ear
    for i in 0..17 {
        let phi = PI * i as f64 / 16.0;
        sites.push((0.9 * phi.cos(), 0.12 - 0.55 * phi.sin()));
    }
    // brows 17-26
    for i in 0..5 {
        let s = i as f64 / 4.0;
        sites.push((0.5 - 0.36 * s, 0.30 + 0.04 * (PI * s).sin()));
    }
    for i in 0..5 {
        let s = i as f64 / 4.0;
        sites.push((-0.14 - 0.36 * s, 0.30 + 0.04 * (PI * s).sin()));
    }
    // nose bridge 27-30, nostrils 31-35
    for lat in [0.17, 0.10, 0.03, -0.04] {
        sites.push((0.0, lat));
    }
    for i in 0..5 {
        sites.push((0.09 - 0.045 * i as f64, -0.12));
    }
    // eyes 36-41 (right), 42-47 (left)
    for k in 0..6 {
        let a = PI * k as f64 / 3.0;
        sites.push((0.32 + 0.11 * a.cos(), 0.17 + 0.035 * a.sin()));
    }
    for k in 0..6 {
        let a = PI * k as f64 / 3.0;
        sites.push((-0.32 + 0.11 * a.cos(), 0.17 + 0.035 * a.sin()));
    }
    // outer lips 48-59, inner lips 60-67
    for k in 0..12 {
        let a = PI * k as f64 / 6.0;
        sites.push((0.2 * a.cos(), -0.305 + 0.06 * a.sin()));
    }
    for k in 0..8 {
        let a = PI * k as f64 / 4.0;
        sites.push((0.15 * a.cos(), -0.305 + 0.015 * a.sin()));
    }
    sites
}

/// Face of the unit icosphere pierced by the radial ray through `dir`.
fn embed_direction(dirs: &[Vec3], faces: &[[u32; 3]], dir: &Vec3) -> LandmarkBinding {
    let mut best: Option<(f64, usize, [f64; 3])> = None;
    for (fi, f) in faces.iter().enumerate() {
        let [a, b, c] = f.map(|i| dirs[i as usize]);
        if a.dot(dir) <= 0.0 {
            continue;
        }
        if let Some((t, bary)) = ray_triangle(&Vec3::zeros(), dir, &a, &b, &c) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, fi, bary));
            }
        }
    }
    let (_, face, bary) = best.expect("a radial ray always pierces a closed icosphere");
    let clamped = bary.map(|w| w.max(0.0));
    let sum: f64 = clamped.iter().sum();
    let mut bary = clamped.map(|w| w / sum);
    bary[2] = 1.0 - bary[0] - bary[1];
    LandmarkBinding { face, bary }
}

/// Smooth random scalar field on the sphere.
struct Wave {
    freq: [Vec3; 3],
    phase: [f64; 3],
    weight: [f64; 3],
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut freq = [Vec3::zeros(); 3];
        let mut phase = [0.0; 3];
        let mut weight = [0.0; 3];
        for m in 0..3 {
            let d = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
                .normalize();
            freq[m] = d * rng.random_range(1.0..4.0);
            phase[m] = rng.random_range(0.0..2.0 * PI);
            weight[m] = rng.sample::<f64, _>(StandardNormal) / 3f64.sqrt();
        }
        Self { freq, phase, weight }
    }

    fn eval(&self, dir: &Vec3) -> f64 {
        (0..3)
            .map(|m| self.weight[m] * 2f64.sqrt() * (self.freq[m].dot(dir) + self.phase[m]).sin())
            .sum()
    }
}

const EXPRESSION_CENTERS: [(f64, f64); 5] = [
    (0.0, -0.31),
    (0.32, 0.17),
    (-0.32, 0.17),
    (0.0, 0.32),
    (0.0, -0.5),
];

fn build_basis(
    dirs: &[Vec3],
    n: usize,
    seed: u64,
    amplitude: f64,
    localized: bool,
) -> Basis {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = dirs.len();
    let normals: Vec<Vec3> = dirs.iter().map(ellipsoid_normal).collect();
    let mut data = vec![0.0; v * 3 * n];
    for k in 0..n {
        let wave = Wave::random(&mut rng);
        let a = amplitude / ((k + 1) as f64).sqrt();
        let center = EXPRESSION_CENTERS[k % EXPRESSION_CENTERS.len()];
        let center = from_lon_lat(center.0, center.1);
        for (i, dir) in dirs.iter().enumerate() {
            let window = if localized {
                let ang = angle_between(dir, &center);
                (-(ang * ang) / (2.0 * 0.3 * 0.3)).exp()
            } else {
                1.0
            };
            let disp = normals[i] * (a * window * wave.eval(dir));
            for axis in 0..3 {
                data[(i * 3 + axis) * n + k] = disp[axis];
            }
        }
    }
    Basis::from_raw(v, n, data).expect("basis sized by construction")
}

/// Deterministic procedural head with `n_beta` shape and `n_psi` expression
/// blendshapes. Subdivision `s` yields `10·4ˢ + 2` vertices and `20·4ˢ`
/// faces.
pub fn builtin_head(n_beta: usize, n_psi: usize, subdivision: usize) -> TemplateAsset {
    let (dirs, faces) = icosphere(subdivision);
    let base_vertices: Vec<Vec3> = dirs.iter().map(surface_point).collect();
    let uv = faces.iter().map(|f| face_uvs(&dirs, f)).collect();
    let landmarks = landmark_sites()
        .into_iter()
        .map(|(lon, lat)| embed_direction(&dirs, &faces, &from_lon_lat(lon, lat)))
        .collect();
    let class_table = ClassTable(
        BUILTIN_CLASSES
            .iter()
            .map(|(c, name)| (*c as u8, name.to_string()))
            .collect(),
    );
    TemplateAsset {
        shape_basis: build_basis(&dirs, n_beta, SHAPE_SEED, SHAPE_AMPLITUDE, false),
        expr_basis: build_basis(&dirs, n_psi, EXPR_SEED, EXPR_AMPLITUDE, true),
        base_vertices,
        topology: Arc::new(Topology {
            faces,
            uv,
            landmarks,
            class_texture: class_texture(),
            class_table,
        }),
    }
}
