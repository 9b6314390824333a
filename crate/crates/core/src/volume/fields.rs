use super::DensityField;
use crate::geometry::Aabb;
use crate::Vec3;

/// σ = 0 everywhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl DensityField for ZeroField {
    fn sigma(&self, _x: &Vec3) -> f64 {
        0.0
    }

    fn bounds(&self) -> Aabb {
        Aabb::empty()
    }
}

/// Constant density inside a closed ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereField {
    pub center: Vec3,
    pub radius: f64,
    pub sigma0: f64,
    pub color: Option<[f64; 3]>,
}

impl SphereField {
    pub fn new(center: Vec3, radius: f64, sigma0: f64) -> Self {
        Self { center, radius, sigma0, color: None }
    }

    pub fn with_color(self, color: [f64; 3]) -> Self {
        Self { color: Some(color), ..self }
    }
}

impl DensityField for SphereField {
    fn sigma(&self, x: &Vec3) -> f64 {
        if (x - self.center).norm() <= self.radius {
            self.sigma0
        } else {
            0.0
        }
    }

    fn sigma_with_clearance(&self, x: &Vec3) -> (f64, f64) {
        let d = (x - self.center).norm();
        if d <= self.radius {
            (self.sigma0, 0.0)
        } else {
            (0.0, d - self.radius)
        }
    }

    fn bounds(&self) -> Aabb {
        Aabb {
            min: self.center - Vec3::repeat(self.radius),
            max: self.center + Vec3::repeat(self.radius),
        }
    }

    fn has_radiance(&self) -> bool {
        self.color.is_some()
    }

    fn radiance(&self, _x: &Vec3, _dir: &Vec3) -> Option<[f64; 3]> {
        self.color
    }
}

/// Constant density where `lo ≤ x[axis] ≤ hi`, unbounded in the other axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabField {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub sigma: f64,
    pub color: Option<[f64; 3]>,
}

impl SlabField {
    pub fn along_z(lo: f64, hi: f64, sigma: f64) -> Self {
        Self { axis: 2, lo, hi, sigma, color: None }
    }

    pub fn with_color(self, color: [f64; 3]) -> Self {
        Self { color: Some(color), ..self }
    }
}

impl DensityField for SlabField {
    fn sigma(&self, x: &Vec3) -> f64 {
        let c = x[self.axis];
        if c >= self.lo && c <= self.hi {
            self.sigma
        } else {
            0.0
        }
    }

    fn bounds(&self) -> Aabb {
        let mut min = Vec3::repeat(f64::NEG_INFINITY);
        let mut max = Vec3::repeat(f64::INFINITY);
        min[self.axis] = self.lo;
        max[self.axis] = self.hi;
        Aabb { min, max }
    }

    fn has_radiance(&self) -> bool {
        self.color.is_some()
    }

    fn radiance(&self, _x: &Vec3, _dir: &Vec3) -> Option<[f64; 3]> {
        self.color
    }
}
