//! Parametric head model: linear shape/expression blendshapes, one global
//! rigid pose, barycentric landmark embedding and a UV class texture.

mod builtin;
mod density;
mod io;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Rotation3, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

pub use builtin::{builtin_head, BuiltinClass, BUILTIN_CLASSES};
pub use density::{class_color, mesh_to_density, MeshDensity};
pub use io::{load_asset, load_class_table, load_embedding, save_asset, AssetPaths};

/// Number of landmarks in the default embedding.
pub const NUM_LANDMARKS: usize = 68;

/// Tolerance on barycentric weights summing to one.
pub const BARY_SUM_TOL: f64 = 1e-9;

/// Shape (`beta`), expression (`psi`) and pose (`theta`) coefficients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadParams {
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Every coefficient independently uniform on the open interval (−2, 2).
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, n_beta: usize, n_psi: usize, n_theta: usize) -> HeadParams {
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| loop {
                let x = rng.random_range(-2.0..2.0);
                if x > -2.0 {
                    break x;
                }
            })
            .collect()
    };
    let beta = draw(n_beta);
    let psi = draw(n_psi);
    let theta = draw(n_theta);
    HeadParams { beta, psi, theta }
}

/// Linear basis of `n` per-vertex displacement fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Basis {
    n: usize,
    /// `data[(vertex * 3 + axis) * n + k]`
    data: Vec<f64>,
}

impl Basis {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_raw(vertices: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != vertices * 3 * n {
            return Err(Error::Dimension {
                what: "basis data",
                expected: vertices * 3 * n,
                actual: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    fn displacement(&self, vertex: usize, coeffs: &[f64]) -> Vec3 {
        if self.n == 0 {
            return Vec3::zeros();
        }
        let mut out = Vec3::zeros();
        for axis in 0..3 {
            let row = &self.data[(vertex * 3 + axis) * self.n..(vertex * 3 + axis + 1) * self.n];
            out[axis] = row.iter().zip(coeffs).map(|(b, c)| b * c).sum();
        }
        out
    }
}

/// A landmark as a barycentric point on one face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkBinding {
    pub face: usize,
    pub bary: [f64; 3],
}

/// Class ID → name. ID 0 is background and never listed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassTable(pub BTreeMap<u8, String>);

impl ClassTable {
    pub fn contains(&self, id: u8) -> bool {
        self.0.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.keys().copied()
    }
}

/// Texels carry class IDs. Row 0 is the top of the image (`v = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTexture {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ClassTexture {
    /// Nearest-texel lookup with OBJ-style `v` (up).
    pub fn sample(&self, uv: Vector2<f64>) -> u8 {
        let col = ((uv.x * self.width as f64).floor() as isize).clamp(0, self.width as isize - 1);
        let row = (((1.0 - uv.y) * self.height as f64).floor() as isize).clamp(0, self.height as isize - 1);
        self.data[row as usize * self.width + col as usize]
    }
}

/// Everything a mesh shares with its template: connectivity, UVs,
/// landmark embedding and the class texture.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub faces: Vec<[u32; 3]>,
    /// One UV per face corner.
    pub uv: Vec<[Vector2<f64>; 3]>,
    pub landmarks: Vec<LandmarkBinding>,
    pub class_texture: ClassTexture,
    pub class_table: ClassTable,
}

impl Topology {
    /// Class ID at a barycentric point of a face.
    pub fn class_at(&self, face: usize, bary: &[f64; 3]) -> u8 {
        let uv = &self.uv[face];
        let p = uv[0] * bary[0] + uv[1] * bary[1] + uv[2] * bary[2];
        self.class_texture.sample(p)
    }

    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i as usize >= vertex_count) {
                return Err(Error::Validation(format!(
                    "face {fi} references vertex {bad} but the mesh has {vertex_count} vertices"
                )));
            }
        }
        if self.uv.len() != self.faces.len() {
            return Err(Error::Dimension {
                what: "per-face uv",
                expected: self.faces.len(),
                actual: self.uv.len(),
            });
        }
        for (fi, corners) in self.uv.iter().enumerate() {
            if corners
                .iter()
                .any(|c| !(0.0..=1.0).contains(&c.x) || !(0.0..=1.0).contains(&c.y))
            {
                return Err(Error::Validation(format!("face {fi} has uv outside [0,1]²")));
            }
        }
        validate_landmarks(&self.landmarks, self.faces.len())?;
        let tex = &self.class_texture;
        if tex.width == 0 || tex.height == 0 || tex.data.len() != tex.width * tex.height {
            return Err(Error::Validation("class texture has inconsistent size".into()));
        }
        if self.class_table.contains(0) {
            return Err(Error::Validation("class ID 0 is reserved for background".into()));
        }
        if let Some(bad) = tex.data.iter().find(|&&id| id != 0 && !self.class_table.contains(id)) {
            return Err(Error::Validation(format!(
                "class texture contains ID {bad} which is not in the class table"
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_landmarks(landmarks: &[LandmarkBinding], face_count: usize) -> Result<()> {
    if landmarks.is_empty() {
        return Err(Error::Validation("landmark embedding is empty".into()));
    }
    for (i, l) in landmarks.iter().enumerate() {
        if l.face >= face_count {
            return Err(Error::Validation(format!(
                "landmark {i} references face {} but the mesh has {face_count} faces",
                l.face
            )));
        }
        if l.bary.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!("landmark {i} has negative barycentric weights")));
        }
        let sum: f64 = l.bary.iter().sum();
        if (sum - 1.0).abs() > BARY_SUM_TOL {
            return Err(Error::Validation(format!(
                "landmark {i} barycentric weights sum to {sum}"
            )));
        }
    }
    Ok(())
}

/// Template head: neutral vertices plus blendshape bases.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateAsset {
    pub base_vertices: Vec<Vec3>,
    pub shape_basis: Basis,
    pub expr_basis: Basis,
    pub topology: Arc<Topology>,
}

impl TemplateAsset {
    pub fn validate(&self) -> Result<()> {
        let v = self.base_vertices.len();
        if self.base_vertices.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation("template has non-finite vertices".into()));
        }
        for basis in [&self.shape_basis, &self.expr_basis] {
            if basis.data.len() != v * 3 * basis.n {
                return Err(Error::Dimension {
                    what: "basis data",
                    expected: v * 3 * basis.n,
                    actual: basis.data.len(),
                });
            }
        }
        self.topology.validate(v)
    }

    pub fn n_beta(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn n_psi(&self) -> usize {
        self.expr_basis.len()
    }

    pub fn neutral_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.base_vertices.clone(),
            topology: Arc::clone(&self.topology),
        }
    }
}

/// A posed head mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub topology: Arc<Topology>,
}

impl Mesh {
    pub fn faces(&self) -> &[[u32; 3]] {
        &self.topology.faces
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.topology.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Applies `x ↦ f(x)` to every vertex.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            topology: Arc::clone(&self.topology),
        }
    }
}

/// `v = R(θ[0..3]) · (v̄ + B_β β + B_ψ ψ)`. Pose coefficients beyond the
/// first three are ignored; a shorter pose vector is zero-padded.
pub fn synthesize_mesh(asset: &TemplateAsset, params: &HeadParams) -> Result<Mesh> {
    if params.beta.len() != asset.n_beta() {
        return Err(Error::Dimension {
            what: "shape coefficients",
            expected: asset.n_beta(),
            actual: params.beta.len(),
        });
    }
    if params.psi.len() != asset.n_psi() {
        return Err(Error::Dimension {
            what: "expression coefficients",
            expected: asset.n_psi(),
            actual: params.psi.len(),
        });
    }
    let all = params.beta.iter().chain(&params.psi).chain(&params.theta);
    if all.into_iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("head parameters must be finite".into()));
    }
    let mut axis_angle = Vec3::zeros();
    for (i, c) in params.theta.iter().take(3).enumerate() {
        axis_angle[i] = *c;
    }
    let rotation = (axis_angle != Vec3::zeros()).then(|| Rotation3::new(axis_angle));
    let vertices = asset
        .base_vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = v
                + asset.shape_basis.displacement(i, &params.beta)
                + asset.expr_basis.displacement(i, &params.psi);
            match &rotation {
                Some(r) => r * p,
                None => p,
            }
        })
        .collect();
    Ok(Mesh {
        vertices,
        topology: Arc::clone(&asset.topology),
    })
}

/// Landmark positions as barycentric combinations of posed vertices.
pub fn landmarks3d(mesh: &Mesh) -> Vec<Vec3> {
    mesh.topology
        .landmarks
        .iter()
        .map(|l| {
            let [a, b, c] = mesh.triangle(l.face);
            a * l.bary[0] + b * l.bary[1] + c * l.bary[2]
        })
        .collect()
}
