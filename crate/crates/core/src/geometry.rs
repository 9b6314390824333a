//! Triangle primitives and a bounding-volume hierarchy for closest-point
//! queries against triangle soups.

use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let d = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }

    /// Parametric interval `[t0, t1]` where the ray is inside the box.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Closest point on triangle `abc` to `p`, returned as barycentric weights.
///
/// Region-based closest-point algorithm (vertex, edge and face Voronoi
/// regions), exact up to rounding.
pub fn closest_point_barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

pub fn barycentric_point(bary: &[f64; 3], a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    a * bary[0] + b * bary[1] + c * bary[2]
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Möller–Trumbore ray/triangle intersection; returns `(t, bary)` for `t > 0`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, [f64; 3])> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > 0.0).then_some((t, [1.0 - u - v, u, v]))
}

/// Result of a closest-point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestHit {
    pub face: usize,
    pub bary: [f64; 3],
    pub point: Vec3,
    pub distance: f64,
}

/// Outcome of a radius-limited query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadiusQuery {
    Hit(ClosestHit),
    /// Nothing within the radius; every triangle is at least this far away.
    Miss { lower_bound: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: triangles `order[first..first + count]`. Inner nodes have
    /// `count == 0`, the left child directly after them and the right child
    /// at `right`.
    first: u32,
    count: u32,
    right: u32,
}

const LEAF_SIZE: usize = 4;

/// Static BVH over triangles, built by median splits on the widest centroid
/// axis. Read-only after construction.
#[derive(Clone, Debug)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Vec3; 3]>,
    face_ids: Vec<usize>,
}

impl TriangleBvh {
    /// `face_ids[i]` is reported for triangle `tris[i]`.
    pub fn build(tris: Vec<[Vec3; 3]>, face_ids: Vec<usize>) -> Self {
        assert_eq!(tris.len(), face_ids.len());
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let boxes: Vec<Aabb> = tris.iter().map(|t| Aabb::from_points(t.iter())).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            Self::build_node(&mut nodes, &mut order, 0, tris.len(), &centroids, &boxes);
        }
        Self {
            nodes,
            order,
            tris,
            face_ids,
        }
    }

    fn build_node(
        nodes: &mut Vec<Node>,
        order: &mut [u32],
        start: usize,
        end: usize,
        centroids: &[Vec3],
        boxes: &[Aabb],
    ) -> u32 {
        let bounds = order[start..end]
            .iter()
            .fold(Aabb::empty(), |b, &i| b.union(&boxes[i as usize]));
        let index = nodes.len() as u32;
        nodes.push(Node {
            bounds,
            first: start as u32,
            count: (end - start) as u32,
            right: 0,
        });
        if end - start <= LEAF_SIZE {
            return index;
        }
        let cbox = Aabb::from_points(order[start..end].iter().map(|&i| &centroids[i as usize]));
        let extent = cbox.max - cbox.min;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        nodes[index as usize].count = 0;
        let left = Self::build_node(nodes, order, start, mid, centroids, boxes);
        debug_assert_eq!(left, index + 1);
        let right = Self::build_node(nodes, order, mid, end, centroids, boxes);
        nodes[index as usize].right = right;
        index
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or_else(Aabb::empty)
    }

    pub fn triangle(&self, i: usize) -> &[Vec3; 3] {
        &self.tris[i]
    }

    /// Closest triangle within `radius` of `p` (inclusive). On a miss the
    /// returned lower bound is at least `radius`.
    pub fn closest_within(&self, p: &Vec3, radius: f64) -> RadiusQuery {
        let mut best_d2 = radius * radius;
        let mut best: Option<(usize, [f64; 3], Vec3)> = None;
        let mut lower_d2 = f64::INFINITY;
        if self.nodes.is_empty() {
            return RadiusQuery::Miss {
                lower_bound: f64::INFINITY,
            };
        }
        let mut stack: [u32; 64] = [0; 64];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let index = stack[sp];
            let node = &self.nodes[index as usize];
            let bd2 = node.bounds.distance_squared(p);
            if bd2 > best_d2 {
                lower_d2 = lower_d2.min(bd2);
                continue;
            }
            if node.count > 0 {
                let first = node.first as usize;
                for &ti in &self.order[first..first + node.count as usize] {
                    let [a, b, c] = &self.tris[ti as usize];
                    let bary = closest_point_barycentric(p, a, b, c);
                    let q = barycentric_point(&bary, a, b, c);
                    let d2 = (q - p).norm_squared();
                    let better = match best {
                        None => d2 <= best_d2,
                        Some((bi, _, _)) => d2 < best_d2 || (d2 == best_d2 && (ti as usize) < bi),
                    };
                    if better {
                        best_d2 = d2;
                        best = Some((ti as usize, bary, q));
                    } else {
                        lower_d2 = lower_d2.min(d2);
                    }
                }
            } else {
                let left = index + 1;
                let right = node.right;
                // visit the nearer child first
                let dl = self.nodes[left as usize].bounds.distance_squared(p);
                let dr = self.nodes[right as usize].bounds.distance_squared(p);
                if dl <= dr {
                    stack[sp] = right;
                    stack[sp + 1] = left;
                } else {
                    stack[sp] = left;
                    stack[sp + 1] = right;
                }
                sp += 2;
            }
        }
        match best {
            Some((ti, bary, point)) => RadiusQuery::Hit(ClosestHit {
                face: self.face_ids[ti],
                bary,
                point,
                distance: best_d2.sqrt(),
            }),
            None => RadiusQuery::Miss {
                lower_bound: lower_d2.sqrt().max(radius),
            },
        }
    }

    /// Unbounded closest-point query.
    pub fn closest(&self, p: &Vec3) -> Option<ClosestHit> {
        if self.is_empty() {
            return None;
        }
        match self.closest_within(p, f64::INFINITY) {
            RadiusQuery::Hit(h) => Some(h),
            RadiusQuery::Miss { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: minimum over the interior projection (if inside)
    /// and the three edge segments.
    fn oracle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
        let n = (b - a).cross(&(c - a));
        let n2 = n.norm_squared();
        let mut best = f64::INFINITY;
        if n2 > 0.0 {
            let q = p - n * (n.dot(&(p - a)) / n2);
            let w0 = (b - q).cross(&(c - q)).dot(&n);
            let w1 = (c - q).cross(&(a - q)).dot(&n);
            let w2 = (a - q).cross(&(b - q)).dot(&n);
            if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                best = (p - q).norm();
            }
        }
        for (s, e) in [(a, b), (b, c), (c, a)] {
            let d = e - s;
            let t = ((p - s).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            best = best.min((p - (s + d * t)).norm());
        }
        best
    }

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        assert_eq!(closest_point_barycentric(&v(-1.0, -1.0, 0.0), &a, &b, &c), [1.0, 0.0, 0.0]);
        assert_eq!(closest_point_barycentric(&v(2.0, -0.5, 1.0), &a, &b, &c), [0.0, 1.0, 0.0]);
        let mid = closest_point_barycentric(&v(0.5, -1.0, 0.0), &a, &b, &c);
        assert!((mid[0] - 0.5).abs() < 1e-15 && (mid[1] - 0.5).abs() < 1e-15);
        let inside = closest_point_barycentric(&v(0.25, 0.25, 3.0), &a, &b, &c);
        let q = barycentric_point(&inside, &a, &b, &c);
        assert!((q - v(0.25, 0.25, 0.0)).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn closest_point_matches_oracle(
            coords in proptest::array::uniform12(-1.0f64..1.0),
        ) {
            let a = v(coords[0], coords[1], coords[2]);
            let b = v(coords[3], coords[4], coords[5]);
            let c = v(coords[6], coords[7], coords[8]);
            let p = v(coords[9], coords[10], coords[11]) * 2.0;
            prop_assume!(triangle_area(&a, &b, &c) > 1e-3);
            let bary = closest_point_barycentric(&p, &a, &b, &c);
            prop_assert!(bary.iter().all(|w| *w >= -1e-12));
            let d = (barycentric_point(&bary, &a, &b, &c) - p).norm();
            prop_assert!((d - oracle_distance(&p, &a, &b, &c)).abs() < 1e-9);
        }
    }

    #[test]
    fn ray_triangle_hits_and_misses() {
        let (a, b, c) = (v(-1.0, -1.0, 2.0), v(1.0, -1.0, 2.0), v(0.0, 1.0, 2.0));
        let (t, bary) = ray_triangle(&Vec3::zeros(), &Vec3::z(), &a, &b, &c).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        assert!((bary.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ray_triangle(&Vec3::zeros(), &-Vec3::z(), &a, &b, &c).is_none());
        assert!(ray_triangle(&v(5.0, 0.0, 0.0), &Vec3::z(), &a, &b, &c).is_none());
    }

    #[test]
    fn ray_box_interval() {
        let b = Aabb {
            min: v(-1.0, -1.0, 1.0),
            max: v(1.0, 1.0, 2.0),
        };
        assert_eq!(b.ray_interval(&Vec3::zeros(), &Vec3::z()), Some((1.0, 2.0)));
        assert_eq!(b.ray_interval(&v(3.0, 0.0, 0.0), &Vec3::z()), None);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tris: Vec<[Vec3; 3]> = (0..300)
            .map(|_| {
                let c = v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let mut jitter = || v(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                [c + jitter(), c + jitter(), c + jitter()]
            })
            .collect();
        let bvh = TriangleBvh::build(tris.clone(), (0..300).collect());
        for _ in 0..500 {
            let p = v(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let brute = tris
                .iter()
                .map(|t| oracle_distance(&p, &t[0], &t[1], &t[2]))
                .fold(f64::INFINITY, f64::min);
            let hit = bvh.closest(&p).unwrap();
            assert!((hit.distance - brute).abs() < 1e-9);
            for radius in [0.05, 0.2] {
                match bvh.closest_within(&p, radius) {
                    RadiusQuery::Hit(h) => {
                        assert!(brute <= radius + 1e-12);
                        assert!((h.distance - brute).abs() < 1e-9);
                    }
                    RadiusQuery::Miss { lower_bound } => {
                        assert!(brute > radius - 1e-12);
                        assert!(lower_bound <= brute + 1e-12);
                        assert!(lower_bound >= radius);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_bvh() {
        let bvh = TriangleBvh::build(vec![], vec![]);
        assert!(bvh.closest(&Vec3::zeros()).is_none());
        assert!(matches!(bvh.closest_within(&Vec3::zeros(), 1.0), RadiusQuery::Miss { .. }));
    }
}
