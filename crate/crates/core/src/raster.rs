//! Z-buffered triangle rasterization into depth, class and fragment maps,
//! plus landmark projection with visibility.
//!
//! Pixels are sampled at their centers. Coverage uses edge functions with a
//! top-left fill rule, so triangles sharing an edge never both claim a pixel.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraRig, MIN_PROJECT_Z};
use crate::headmodel::{landmarks3d, ClassTable, Mesh};
use crate::imageio::{decode_pfm, decode_pgm, encode_pfm, encode_pgm, FloatImage, GrayImage};
use crate::{Error, Result, Vec3};

/// Landmark visibility slack in meters.
pub const VISIBILITY_EPS_M: f64 = 1e-3;

const BAND_ROWS: usize = 16;

/// Camera-space z per pixel with an explicit validity channel. Invalid
/// pixels store `+∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![f64::INFINITY; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Row-major pixels; `None` or non-positive/non-finite values are
    /// background.
    pub fn from_options(width: usize, height: usize, pixels: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut map = Self::background(width, height);
        let mut n = 0;
        for (i, p) in pixels.into_iter().enumerate() {
            if let Some(z) = p.filter(|z| z.is_finite() && *z > 0.0) {
                map.values[i] = z;
                map.valid[i] = true;
            }
            n = i + 1;
        }
        assert_eq!(n, width * height, "pixel count does not match resolution");
        map
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.at(row * self.width + col)
    }

    pub fn at(&self, index: usize) -> Option<f64> {
        self.valid[index].then(|| self.values[index])
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Rounds every depth to `f32`, the precision of the file format.
    pub fn quantized(&self) -> Self {
        Self::from_options(
            self.width,
            self.height,
            (0..self.values.len()).map(|i| self.at(i).map(|z| z as f32 as f64)),
        )
    }

    pub fn to_float_image(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            data: (0..self.values.len())
                .map(|i| self.at(i).map_or(f32::INFINITY, |z| z as f32))
                .collect(),
        }
    }

    pub fn from_float_image(img: &FloatImage) -> Result<Self> {
        if let Some(bad) = img.data.iter().find(|v| !(**v == f32::INFINITY || (v.is_finite() && **v > 0.0))) {
            return Err(Error::Validation(format!("depth values must be positive or +inf, found {bad}")));
        }
        Ok(Self::from_options(
            img.width,
            img.height,
            img.data.iter().map(|v| v.is_finite().then_some(*v as f64)),
        ))
    }

    pub fn encode_pfm(&self) -> Vec<u8> {
        encode_pfm(&self.to_float_image())
    }

    pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Self> {
        Self::from_float_image(&decode_pfm(bytes, path)?)
    }
}

/// Class ID per pixel; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ClassMap {
    pub fn covered_fraction(&self) -> f64 {
        self.data.iter().filter(|c| **c != 0).count() as f64 / self.data.len() as f64
    }

    pub fn validate(&self, table: &ClassTable) -> Result<()> {
        match self.data.iter().find(|&&c| c != 0 && !table.contains(c)) {
            Some(c) => Err(Error::Validation(format!("class map contains ID {c} which is not in the class table"))),
            None => Ok(()),
        }
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        encode_pgm(&GrayImage { width: self.width, height: self.height, data: self.data.clone() })
    }

    pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Self> {
        let img = decode_pgm(bytes, path)?;
        Ok(Self { width: img.width, height: img.height, data: img.data })
    }
}

/// Face index and perspective-correct barycentrics of the visible fragment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub face: usize,
    pub bary: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rasterized {
    pub depth: DepthMap,
    pub classes: ClassMap,
    pub fragments: Vec<Option<Fragment>>,
}

struct ScreenTriangle {
    face: usize,
    /// Pixel-space positions, wound so the signed area is positive.
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    /// Maps the wound corner order back to the face's corner order.
    corner: [usize; 3],
    area: f64,
    rows: (usize, usize),
    cols: (usize, usize),
}

fn edge(a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// With positive area in y-down pixel space, top edges are horizontal and
/// run toward +x; left edges run toward −y.
fn is_top_left(a: &[f64; 2], b: &[f64; 2]) -> bool {
    let dy = b[1] - a[1];
    let dx = b[0] - a[0];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn setup(mesh: &Mesh, rig: &CameraRig) -> Vec<ScreenTriangle> {
    let k = &rig.intrinsics;
    let (w, h) = (rig.width as f64, rig.height as f64);
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| rig.extrinsics.to_camera(v)).collect();
    let mut out = Vec::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let c = f.map(|i| cam[i as usize]);
        if c.iter().any(|q| q.z <= MIN_PROJECT_Z) {
            continue;
        }
        let mut p = c.map(|q| [(k.fx * q.x / q.z + k.cx) * w, (k.fy * q.y / q.z + k.cy) * h]);
        let mut inv_z = c.map(|q| 1.0 / q.z);
        let mut corner = [0, 1, 2];
        let mut area = edge(&p[0], &p[1], &p[2]);
        if !(area.is_finite()) || area == 0.0 {
            continue;
        }
        if area < 0.0 {
            p.swap(1, 2);
            inv_z.swap(1, 2);
            corner.swap(1, 2);
            area = -area;
        }
        let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        // pixel centers (i + 0.5) inside [min, max]
        let c0 = (min_x - 0.5).ceil().max(0.0);
        let c1 = (max_x - 0.5).floor().min(w - 1.0);
        let r0 = (min_y - 0.5).ceil().max(0.0);
        let r1 = (max_y - 0.5).floor().min(h - 1.0);
        if c0 > c1 || r0 > r1 {
            continue;
        }
        out.push(ScreenTriangle {
            face: fi,
            p,
            inv_z,
            corner,
            area,
            rows: (r0 as usize, r1 as usize),
            cols: (c0 as usize, c1 as usize),
        });
    }
    out
}

/// Renders depth, classes and fragments of `mesh` seen from `rig`.
pub fn rasterize(mesh: &Mesh, rig: &CameraRig) -> Rasterized {
    let (w, h) = (rig.width, rig.height);
    let tris = setup(mesh, rig);
    let topo = &mesh.topology;
    let bands: Vec<(Vec<f64>, Vec<Option<Fragment>>)> = (0..h.div_ceil(BAND_ROWS))
        .into_par_iter()
        .map(|band| {
            let row0 = band * BAND_ROWS;
            let row1 = (row0 + BAND_ROWS).min(h);
            let mut zbuf = vec![f64::INFINITY; (row1 - row0) * w];
            let mut frags: Vec<Option<Fragment>> = vec![None; (row1 - row0) * w];
            for t in tris.iter().filter(|t| t.rows.1 >= row0 && t.rows.0 < row1) {
                let tl = [is_top_left(&t.p[1], &t.p[2]), is_top_left(&t.p[2], &t.p[0]), is_top_left(&t.p[0], &t.p[1])];
                for row in t.rows.0.max(row0)..=t.rows.1.min(row1 - 1) {
                    let py = row as f64 + 0.5;
                    for col in t.cols.0..=t.cols.1 {
                        let q = [col as f64 + 0.5, py];
                        let e = [edge(&t.p[1], &t.p[2], &q), edge(&t.p[2], &t.p[0], &q), edge(&t.p[0], &t.p[1], &q)];
                        if !(0..3).all(|i| e[i] > 0.0 || (e[i] == 0.0 && tl[i])) {
                            continue;
                        }
                        let l = e.map(|x| x / t.area);
                        let inv = l[0] * t.inv_z[0] + l[1] * t.inv_z[1] + l[2] * t.inv_z[2];
                        let z = 1.0 / inv;
                        let slot = (row - row0) * w + col;
                        if z < zbuf[slot] {
                            zbuf[slot] = z;
                            let mut bary = [0.0; 3];
                            for i in 0..3 {
                                bary[t.corner[i]] = l[i] * t.inv_z[i] * z;
                            }
                            frags[slot] = Some(Fragment { face: t.face, bary });
                        }
                    }
                }
            }
            (zbuf, frags)
        })
        .collect();
    let mut zs = Vec::with_capacity(w * h);
    let mut fragments = Vec::with_capacity(w * h);
    for (z, f) in bands {
        zs.extend(z);
        fragments.extend(f);
    }
    let depth = DepthMap::from_options(w, h, zs.iter().map(|z| z.is_finite().then_some(*z)));
    let classes = ClassMap {
        width: w,
        height: h,
        data: fragments
            .iter()
            .map(|f| f.map_or(0, |f| topo.class_at(f.face, &f.bary)))
            .collect(),
    };
    Rasterized { depth, classes, fragments }
}

/// A projected landmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark2d {
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

/// Projects landmarks; a landmark is visible when it is in front of the
/// camera, inside the frame and not behind the rasterized surface by more
/// than [`VISIBILITY_EPS_M`].
pub fn project_landmarks(mesh: &Mesh, rig: &CameraRig, depth: &DepthMap) -> Vec<Landmark2d> {
    let points = landmarks3d(mesh);
    project(&rig.projection, &points)
        .into_iter()
        .map(|p| {
            let (u, v) = (p.uv.x, p.uv.y);
            let in_frame = p.valid && (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v);
            let visible = in_frame && {
                let col = ((u * depth.width as f64).floor() as usize).min(depth.width - 1);
                let row = ((v * depth.height as f64).floor() as usize).min(depth.height - 1);
                match depth.get(row, col) {
                    Some(z) => p.depth <= z + VISIBILITY_EPS_M,
                    None => true,
                }
            };
            Landmark2d { u, v, visible }
        })
        .collect()
}
