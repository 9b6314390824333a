//! Trilinear density grids and the DVOX file format.
//!
//! DVOX layout, little-endian: `b"DVOX"`, `u16` version (1), three `u32`
//! dims, six `f32` bbox values (min xyz then max xyz), then
//! `nx·ny·nz` `f32` values with x fastest.

use std::path::Path;

use rayon::prelude::*;

use super::DensityField;
use crate::geometry::Aabb;
use crate::imageio::{read_file, write_file};
use crate::{Error, Result, Vec3};

const MAGIC: &[u8; 4] = b"DVOX";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12 + 24;

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    min: [f32; 3],
    max: [f32; 3],
    values: Vec<f32>,
    bounds: Aabb,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], min: [f32; 3], max: [f32; 3], values: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::Validation(format!("voxel dims must be at least 2 per axis, got {dims:?}")));
        }
        let count = dims[0] * dims[1] * dims[2];
        if values.len() != count {
            return Err(Error::Dimension { what: "voxel values", expected: count, actual: values.len() });
        }
        if (0..3).any(|i| !(min[i].is_finite() && max[i].is_finite() && min[i] < max[i])) {
            return Err(Error::Validation("voxel bbox must be finite with min < max".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("voxel values must be finite and nonnegative, found {v}")));
        }
        let bounds = Aabb {
            min: Vec3::new(min[0] as f64, min[1] as f64, min[2] as f64),
            max: Vec3::new(max[0] as f64, max[1] as f64, max[2] as f64),
        };
        Ok(Self { dims, min, max, values, bounds })
    }

    /// Samples `field` at every lattice point of a grid spanning `bounds`.
    /// The bbox is stored in `f32`; lattice points use the rounded bbox.
    pub fn from_field<F: DensityField + ?Sized>(field: &F, dims: [usize; 3], bounds: &Aabb) -> Result<Self> {
        let min = [bounds.min.x as f32, bounds.min.y as f32, bounds.min.z as f32];
        let max = [bounds.max.x as f32, bounds.max.y as f32, bounds.max.z as f32];
        let proto = Self::new(dims, min, max, vec![0.0; dims.iter().product()])?;
        let [nx, ny, nz] = dims;
        let values: Vec<f32> = (0..nz)
            .into_par_iter()
            .flat_map_iter(|k| {
                let proto = &proto;
                (0..ny).flat_map(move |j| {
                    (0..nx).map(move |i| field.sigma(&proto.lattice_point(i, j, k)) as f32)
                })
            })
            .collect();
        Self::new(dims, min, max, values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn lattice_point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let idx = [i, j, k];
        let mut p = Vec3::zeros();
        for a in 0..3 {
            let frac = idx[a] as f64 / (self.dims[a] - 1) as f64;
            p[a] = self.bounds.min[a] + frac * (self.bounds.max[a] - self.bounds.min[a]);
        }
        p
    }

    fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.dims[1] + j) * self.dims[0] + i] as f64
    }
}

impl DensityField for VoxelGrid {
    fn sigma(&self, x: &Vec3) -> f64 {
        if !self.bounds.contains(x) {
            return 0.0;
        }
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let mut g = (x[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a]) * (n - 1) as f64;
            // snap rounding noise so lattice points reproduce stored values
            if (g - g.round()).abs() < 1e-9 {
                g = g.round();
            }
            let i0 = (g.floor().max(0.0) as usize).min(n - 2);
            cell[a] = i0;
            frac[a] = (g - i0 as f64).clamp(0.0, 1.0);
        }
        let [i, j, k] = cell;
        let [fx, fy, fz] = frac;
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else if t == 1.0 { b } else { a + (b - a) * t };
        let c00 = lerp(self.value(i, j, k), self.value(i + 1, j, k), fx);
        let c10 = lerp(self.value(i, j + 1, k), self.value(i + 1, j + 1, k), fx);
        let c01 = lerp(self.value(i, j, k + 1), self.value(i + 1, j, k + 1), fx);
        let c11 = lerp(self.value(i, j + 1, k + 1), self.value(i + 1, j + 1, k + 1), fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        lerp(c0, c1, fz).max(0.0)
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }
}

pub fn encode_dvox(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + grid.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in grid.dims {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in grid.min.iter().chain(&grid.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dvox(bytes: &[u8], path: &Path) -> Result<VoxelGrid> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::parse(path, "byte 0", "missing DVOX magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(path, format!("byte {}", bytes.len()), format!("truncated header: need {HEADER_LEN} bytes")));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::parse(path, "byte 4", format!("unsupported DVOX version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dims = [u32_at(6), u32_at(10), u32_at(14)];
    let min = [f32_at(18), f32_at(22), f32_at(26)];
    let max = [f32_at(30), f32_at(34), f32_at(38)];
    let count = dims.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let expected = count.and_then(|c| c.checked_mul(4)).and_then(|b| b.checked_add(HEADER_LEN));
    let Some(expected) = expected else {
        return Err(Error::parse(path, "byte 6", "grid dimensions overflow"));
    };
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for dims {dims:?}, found {}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    VoxelGrid::new(dims, min, max, values)
}

pub fn read_dvox(path: &Path) -> Result<VoxelGrid> {
    decode_dvox(&read_file(path)?, path)
}

pub fn write_dvox(grid: &VoxelGrid, path: &Path) -> Result<()> {
    write_file(path, &encode_dvox(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::SphereField;
    use proptest::prelude::*;

    fn ramp_grid() -> VoxelGrid {
        let dims = [4, 3, 5];
        let values = (0..60).map(|i| ((i * 37) % 11) as f32 * 0.5).collect();
        VoxelGrid::new(dims, [-1.0, -0.5, 0.0], [1.0, 0.5, 2.0], values).unwrap()
    }

    #[test]
    fn lattice_values_are_exact() {
        let g = ramp_grid();
        for k in 0..5 {
            for j in 0..3 {
                for i in 0..4 {
                    assert_eq!(g.sigma(&g.lattice_point(i, j, k)), g.value(i, j, k));
                }
            }
        }
    }

    #[test]
    fn continuous_across_cell_boundaries() {
        let g = ramp_grid();
        let steps = 20_000;
        let mut prev: Option<f64> = None;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let p = Vec3::new(-1.0 + 2.0 * t, -0.5 + 0.77 * t, 0.1 + 1.8 * t);
            let v = g.sigma(&p);
            if let Some(q) = prev {
                // per-axis slopes are at most 10 per unit; the path length is under 4.6
                assert!((v - q).abs() < 10.0 * 4.6 / steps as f64 + 1e-6);
            }
            prev = Some(v);
        }
        // across an interior boundary from both sides
        let x = -1.0 + 2.0 / 3.0;
        let eps = 1e-9;
        for (y, z) in [(0.1, 0.3), (-0.2, 1.7)] {
            let a = g.sigma(&Vec3::new(x - eps, y, z));
            let b = g.sigma(&Vec3::new(x + eps, y, z));
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_small_dims_and_negative_values() {
        assert!(VoxelGrid::new([1, 2, 2], [0.0; 3], [1.0; 3], vec![0.0; 4]).is_err());
        assert!(VoxelGrid::new([2, 2, 2], [0.0; 3], [1.0; 3], vec![-1.0; 8]).is_err());
    }

    #[test]
    fn dvox_round_trip_and_errors() {
        let g = ramp_grid();
        let bytes = encode_dvox(&g);
        assert_eq!(&bytes[..4], b"DVOX");
        assert_eq!(bytes.len(), HEADER_LEN + 60 * 4);
        assert_eq!(decode_dvox(&bytes, Path::new("g")).unwrap(), g);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dvox(&bad, Path::new("g")).unwrap_err().to_string().contains("magic"));
        assert!(decode_dvox(&bytes[..bytes.len() - 2], Path::new("g")).is_err());
    }

    #[test]
    fn baked_sphere_matches_analytic_at_lattice() {
        let s = SphereField::new(Vec3::zeros(), 0.5, 3.0);
        let bounds = Aabb { min: Vec3::repeat(-0.75), max: Vec3::repeat(0.75) };
        let g = VoxelGrid::from_field(&s, [7, 7, 7], &bounds).unwrap();
        assert_eq!(g.sigma(&Vec3::zeros()), 3.0);
        assert_eq!(g.sigma(&g.lattice_point(0, 0, 0)), 0.0);
    }

    proptest! {
        #[test]
        fn interpolation_is_bounded_by_neighbors(x in -1.0f64..1.0, y in -0.5f64..0.5, z in 0.0f64..2.0) {
            let g = ramp_grid();
            let v = g.sigma(&Vec3::new(x, y, z));
            let max = g.values().iter().cloned().fold(0.0f32, f32::max) as f64;
            prop_assert!(v >= 0.0 && v <= max + 1e-12);
        }
    }
}
