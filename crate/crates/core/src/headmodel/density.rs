use std::sync::Arc;

use super::{Mesh, Topology};
use crate::geometry::{triangle_area, Aabb, RadiusQuery, TriangleBvh};
use crate::volume::DensityField;
use crate::{Error, Result, Vec3};

/// Triangles with area below this (m²) are skipped.
const MIN_TRIANGLE_AREA: f64 = 1e-14;

/// Tent-shaped density around a mesh surface:
/// `σ(x) = σ₀·max(0, 1 − d(x)/w)` with `d` the exact distance to the mesh.
#[derive(Clone, Debug)]
pub struct MeshDensity {
    bvh: TriangleBvh,
    topology: Arc<Topology>,
    shell_width: f64,
    sigma0: f64,
    bounds: Aabb,
    degenerate: usize,
}

pub fn mesh_to_density(mesh: &Mesh, shell_width: f64, sigma0: f64) -> Result<MeshDensity> {
    if !(shell_width > 0.0 && shell_width.is_finite()) {
        return Err(Error::Domain(format!("shell width must be positive, got {shell_width}")));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::Domain(format!("sigma0 must be positive, got {sigma0}")));
    }
    let mut tris = Vec::with_capacity(mesh.faces().len());
    let mut ids = Vec::with_capacity(mesh.faces().len());
    let mut degenerate = 0;
    for f in 0..mesh.faces().len() {
        let t = mesh.triangle(f);
        if triangle_area(&t[0], &t[1], &t[2]) < MIN_TRIANGLE_AREA {
            degenerate += 1;
            continue;
        }
        tris.push(t);
        ids.push(f);
    }
    if degenerate > 0 {
        log::warn!("mesh_to_density: skipped {degenerate} degenerate triangles");
    }
    let bvh = TriangleBvh::build(tris, ids);
    let bounds = if bvh.is_empty() { Aabb::empty() } else { bvh.bounds().expanded(shell_width) };
    Ok(MeshDensity {
        bvh,
        topology: Arc::clone(&mesh.topology),
        shell_width,
        sigma0,
        bounds,
        degenerate,
    })
}

impl MeshDensity {
    pub fn shell_width(&self) -> f64 {
        self.shell_width
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Number of zero-area triangles left out of the field.
    pub fn degenerate_count(&self) -> usize {
        self.degenerate
    }

    /// Distance to the surface when it is below the shell width.
    pub fn distance_within_shell(&self, x: &Vec3) -> Option<f64> {
        match self.bvh.closest_within(x, self.shell_width) {
            RadiusQuery::Hit(h) => Some(h.distance),
            RadiusQuery::Miss { .. } => None,
        }
    }

    /// Unbounded distance to the surface (`None` for an empty mesh).
    pub fn distance(&self, x: &Vec3) -> Option<f64> {
        self.bvh.closest(x).map(|h| h.distance)
    }

    fn tent(&self, d: f64) -> f64 {
        self.sigma0 * (1.0 - d / self.shell_width).max(0.0)
    }
}

/// Fixed display color per class ID.
pub fn class_color(id: u8) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 9] = [
        [1.0, 1.0, 1.0],
        [0.87, 0.70, 0.60],
        [0.80, 0.45, 0.40],
        [0.20, 0.35, 0.70],
        [0.20, 0.60, 0.35],
        [0.75, 0.20, 0.30],
        [0.55, 0.10, 0.20],
        [0.35, 0.25, 0.15],
        [0.45, 0.30, 0.15],
    ];
    PALETTE.get(id as usize).copied().unwrap_or_else(|| {
        let h = id as f64 * 0.618_033_988_749_895 % 1.0;
        [0.3 + 0.6 * h, 0.3 + 0.6 * (1.0 - h), 0.5]
    })
}

impl DensityField for MeshDensity {
    fn sigma(&self, x: &Vec3) -> f64 {
        self.distance_within_shell(x).map_or(0.0, |d| self.tent(d))
    }

    fn sigma_with_clearance(&self, x: &Vec3) -> (f64, f64) {
        match self.bvh.closest_within(x, self.shell_width) {
            RadiusQuery::Hit(h) => (self.tent(h.distance), 0.0),
            RadiusQuery::Miss { lower_bound } => (0.0, lower_bound - self.shell_width),
        }
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }

    fn has_radiance(&self) -> bool {
        true
    }

    fn radiance(&self, x: &Vec3, _dir: &Vec3) -> Option<[f64; 3]> {
        let hit = self.bvh.closest(x)?;
        Some(class_color(self.topology.class_at(hit.face, &hit.bary)))
    }
}
