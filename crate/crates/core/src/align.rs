//! Affine alignment of a head mesh to a density field.
//!
//! The objective combines a depth term (volumetric depth of the field vs the
//! rasterized depth of the transformed mesh, summed over pixels valid in
//! both) and a chamfer term between the transformed landmarks and the
//! field's level set, both in the camera frame.
//!
//! Optimization runs in two phases. Phase 1 is ICP: every level-set sample
//! is matched to its closest point on the transformed mesh surface and the
//! affine map is refit in closed form. Phase 2 refines the full objective
//! with sign-based adaptive steps (Rprop) on central finite-difference
//! gradients, accepting only steps that lower the loss.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::geometry::{barycentric_point, RadiusQuery, TriangleBvh};
use crate::headmodel::{landmarks3d, Mesh};
use crate::raster::{rasterize, DepthMap};
use crate::spatial::{sum_nearest_squared, KdTree};
use crate::volume::{extract_level_set, render_depth_map, DensityField, LevelSetMode, MarchConfig};
use crate::{Error, Mat3, Result, Vec3};

/// `x ↦ A·x + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub a: Mat3,
    pub b: Vec3,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self { a: Mat3::identity(), b: Vec3::zeros() }
    }

    /// Rows of `[A|b]`.
    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[4 * r + c] = self.a[(r, c)];
            }
            out[4 * r + 3] = self.b[r];
        }
        out
    }

    pub fn from_array(p: &[f64; 12]) -> Self {
        let mut a = Mat3::zeros();
        let mut b = Vec3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                a[(r, c)] = p[4 * r + c];
            }
            b[r] = p[4 * r + 3];
        }
        Self { a, b }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.a * x + self.b
    }

    pub fn apply_mesh(&self, mesh: &Mesh) -> Mesh {
        mesh.map_vertices(|v| self.apply(v))
    }

    pub fn det(&self) -> f64 {
        self.a.determinant()
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite()) && self.det() > 0.0
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineParams) -> AffineParams {
        AffineParams { a: self.a * other.a, b: self.a * other.b + self.b }
    }
}

/// Symmetric sum of squared nearest-neighbor distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("chamfer distance needs two nonempty point sets".into()));
    }
    Ok(chamfer_with_tree(a, b, &KdTree::new(b)))
}

fn chamfer_with_tree(a: &[Vec3], b: &[Vec3], b_tree: &KdTree) -> f64 {
    let a_tree = KdTree::new(a);
    sum_nearest_squared(b_tree, a) + sum_nearest_squared(&a_tree, b)
}

/// Sum of squared depth differences over pixels valid in both maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthLoss {
    pub value: f64,
    pub count: usize,
}

impl DepthLoss {
    /// No jointly valid pixels.
    pub fn degenerate(&self) -> bool {
        self.count == 0
    }
}

pub fn depth_loss(generated: &DepthMap, mesh: &DepthMap) -> Result<DepthLoss> {
    if (generated.width, generated.height) != (mesh.width, mesh.height) {
        return Err(Error::Domain(format!(
            "depth maps differ in resolution: {}x{} vs {}x{}",
            generated.width, generated.height, mesh.width, mesh.height
        )));
    }
    let mut value = 0.0;
    let mut count = 0;
    for i in 0..generated.values().len() {
        if let (Some(g), Some(m)) = (generated.at(i), mesh.at(i)) {
            value += (g - m) * (g - m);
            count += 1;
        }
    }
    Ok(DepthLoss { value, count })
}

/// Least-squares affine map with `A·src[i] + b ≈ dst[i]`.
pub fn fit_affine(src: &[Vec3], dst: &[Vec3]) -> Result<AffineParams> {
    if src.len() != dst.len() {
        return Err(Error::Dimension { what: "correspondences", expected: src.len(), actual: dst.len() });
    }
    if src.len() < 4 {
        return Err(Error::Domain("an affine fit needs at least 4 correspondences".into()));
    }
    let n = src.len() as f64;
    let ps: Vec3 = src.iter().sum::<Vec3>() / n;
    let qs: Vec3 = dst.iter().sum::<Vec3>() / n;
    let mut spp = Mat3::zeros();
    let mut sqp = Mat3::zeros();
    for (p, q) in src.iter().zip(dst) {
        let dp = p - ps;
        let dq = q - qs;
        spp += dp * dp.transpose();
        sqp += dq * dp.transpose();
    }
    let inv = spp
        .try_inverse()
        .filter(|m| m.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Domain("correspondences are coplanar; affine fit is singular".into()))?;
    let a = sqp * inv;
    Ok(AffineParams { a, b: qs - a * ps })
}

/// Affine map minimizing `Σ (nᵢ·rᵢ)² + λ‖rᵢ‖²` with `rᵢ = A·srcᵢ + b − dstᵢ`.
///
/// `λ > 0` keeps the fit determined along directions the normals leave
/// free; `λ → ∞` approaches [`fit_affine`].
pub fn fit_affine_point_plane(src: &[Vec3], dst: &[Vec3], normals: &[Vec3], lambda: f64) -> Result<AffineParams> {
    if src.len() != dst.len() || src.len() != normals.len() {
        return Err(Error::Dimension { what: "correspondences", expected: src.len(), actual: dst.len().min(normals.len()) });
    }
    if src.len() < 4 {
        return Err(Error::Domain("an affine fit needs at least 4 correspondences".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Domain("point-to-plane fit needs a positive lambda".into()));
    }
    let ps: Vec3 = src.iter().sum::<Vec3>() / src.len() as f64;
    let mut lhs = SMatrix::<f64, 12, 12>::zeros();
    let mut rhs = SVector::<f64, 12>::zeros();
    for ((p, q), n) in src.iter().zip(dst).zip(normals) {
        let m = n * n.transpose() + Mat3::identity() * lambda;
        let d = p - ps;
        let h = [d.x, d.y, d.z, 1.0];
        let mq = m * q;
        for r in 0..3 {
            for i in 0..4 {
                rhs[4 * r + i] += mq[r] * h[i];
                for c in 0..3 {
                    for j in 0..4 {
                        lhs[(4 * r + i, 4 * c + j)] += m[(r, c)] * h[i] * h[j];
                    }
                }
            }
        }
    }
    let x = lhs
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Domain("correspondences are coplanar; affine fit is singular".into()))?;
    let mut centered = AffineParams::from_array(&x.as_slice().try_into().expect("12 entries"));
    centered.b -= centered.a * ps;
    Ok(centered)
}

/// How the per-pixel depth residuals enter the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthReduction {
    /// Sum over jointly valid pixels.
    #[default]
    Sum,
    /// Sum divided by the jointly valid pixel count.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub w_depth: f64,
    pub w_chamfer: f64,
    pub depth_reduction: DepthReduction,
    /// Phase 2 iteration cap.
    pub max_iterations: usize,
    /// Phase 1 iteration cap.
    pub icp_iterations: usize,
    /// Point-to-point weight in the Phase 1 point-to-plane fit.
    pub icp_lambda: f64,
    /// Phase 1 stops when no parameter moves by more than this.
    pub icp_tol: f64,
    /// Stop when no parameter moves by more than this.
    pub param_tol: f64,
    /// Phase 2 stops when a step improves the loss by less than this
    /// fraction of its current value.
    pub loss_tol: f64,
    /// Square optimization resolution in pixels.
    pub resolution: usize,
    /// Level-set density threshold.
    pub alpha: f64,
    /// Central finite-difference step.
    pub fd_step: f64,
    /// Level-set mode for the chamfer term.
    pub chamfer_level_set: LevelSetMode,
    /// Ray marching for the generated depth and level sets.
    pub march: MarchConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            w_depth: 1.0,
            w_chamfer: 1e-3,
            depth_reduction: DepthReduction::Sum,
            max_iterations: 60,
            icp_iterations: 30,
            icp_lambda: 0.002,
            icp_tol: 1e-4,
            param_tol: 1e-7,
            loss_tol: 1e-9,
            resolution: 64,
            alpha: 200.0,
            fd_step: 1e-4,
            chamfer_level_set: LevelSetMode::FirstHit,
            march: MarchConfig { n_samples: 1024, ..MarchConfig::default() },
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_depth >= 0.0 && self.w_chamfer >= 0.0) || self.w_depth + self.w_chamfer <= 0.0 {
            return Err(Error::Config("align weights must be nonnegative and not both zero".into()));
        }
        if self.resolution < 16 {
            return Err(Error::Config("align resolution must be at least 16".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("align alpha must be positive".into()));
        }
        if !(self.icp_lambda > 0.0) {
            return Err(Error::Config("align icp_lambda must be positive".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("align fd_step must be positive".into()));
        }
        if !(self.param_tol >= 0.0 && self.loss_tol >= 0.0 && self.icp_tol >= 0.0) {
            return Err(Error::Config("align tolerances must be nonnegative".into()));
        }
        self.march.validate()
    }
}

/// Objective terms at one transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub depth: f64,
    pub depth_pixels: usize,
    pub chamfer: f64,
    pub total: f64,
    /// No jointly valid pixels; the depth term contributed 0.
    pub depth_degenerate: bool,
    /// Empty level set; the chamfer term contributed 0.
    pub chamfer_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentReport {
    pub depth_loss: f64,
    pub chamfer_loss: f64,
    pub total_loss: f64,
    pub initial_loss: f64,
    pub depth_pixels: usize,
    pub depth_degenerate: bool,
    pub chamfer_degenerate: bool,
    /// Phase 1 plus Phase 2 iterations.
    pub iterations: usize,
    pub icp_iterations: usize,
    pub converged: bool,
    /// Total loss after each iteration.
    pub trace: Vec<f64>,
    /// Rows of `[A|b]`.
    pub transform: [f64; 12],
}

impl AlignmentReport {
    /// Report for a transform that was evaluated but not optimized.
    pub fn evaluated(transform: &AffineParams, terms: &LossTerms) -> Self {
        Self {
            depth_loss: terms.depth,
            chamfer_loss: terms.chamfer,
            total_loss: terms.total,
            initial_loss: terms.total,
            depth_pixels: terms.depth_pixels,
            depth_degenerate: terms.depth_degenerate,
            chamfer_degenerate: terms.chamfer_degenerate,
            iterations: 0,
            icp_iterations: 0,
            converged: true,
            trace: Vec::new(),
            transform: transform.to_array(),
        }
    }

    pub fn affine(&self) -> AffineParams {
        AffineParams::from_array(&self.transform)
    }
}

/// Field-side quantities that stay fixed while the transform changes.
pub struct AlignmentProblem<'a> {
    mesh: &'a Mesh,
    rig: CameraRig,
    cfg: AlignConfig,
    generated_depth: DepthMap,
    /// Level set for the chamfer term, camera frame.
    level_set_cam: Vec<Vec3>,
    level_set_tree: KdTree,
    /// Every level-set sample, world frame; ICP targets.
    icp_targets: Vec<Vec3>,
}

impl<'a> AlignmentProblem<'a> {
    pub fn new<F: DensityField + ?Sized>(mesh: &'a Mesh, field: &F, rig: &CameraRig, cfg: &AlignConfig) -> Result<Self> {
        cfg.validate()?;
        let rig = rig.with_resolution(cfg.resolution, cfg.resolution)?;
        let generated_depth = render_depth_map(field, &rig, &cfg.march)?;
        let chamfer_world = extract_level_set(field, &rig, &cfg.march, cfg.alpha, cfg.chamfer_level_set)?;
        let icp_targets = if cfg.chamfer_level_set == LevelSetMode::AllHits {
            chamfer_world.clone()
        } else {
            extract_level_set(field, &rig, &cfg.march, cfg.alpha, LevelSetMode::AllHits)?
        };
        let level_set_cam: Vec<Vec3> = chamfer_world.iter().map(|p| rig.extrinsics.to_camera(p)).collect();
        let level_set_tree = KdTree::new(&level_set_cam);
        Ok(Self {
            mesh,
            rig,
            cfg: cfg.clone(),
            generated_depth,
            level_set_cam,
            level_set_tree,
            icp_targets,
        })
    }

    pub fn generated_depth(&self) -> &DepthMap {
        &self.generated_depth
    }

    pub fn level_set(&self) -> &[Vec3] {
        &self.level_set_cam
    }

    pub fn evaluate(&self, ta: &AffineParams) -> LossTerms {
        let cfg = &self.cfg;
        let mut depth = 0.0;
        let mut depth_pixels = 0;
        let moved = ta.apply_mesh(self.mesh);
        if cfg.w_depth > 0.0 {
            let raster = rasterize(&moved, &self.rig);
            let d = depth_loss(&self.generated_depth, &raster.depth).expect("maps share the rig resolution");
            depth = match cfg.depth_reduction {
                DepthReduction::Sum => d.value,
                DepthReduction::Mean if d.count > 0 => d.value / d.count as f64,
                DepthReduction::Mean => 0.0,
            };
            depth_pixels = d.count;
        }
        let chamfer_degenerate = self.level_set_cam.is_empty();
        let mut chamfer_value = 0.0;
        if cfg.w_chamfer > 0.0 && !chamfer_degenerate {
            let lc: Vec<Vec3> = landmarks3d(&moved).iter().map(|l| self.rig.extrinsics.to_camera(l)).collect();
            chamfer_value = chamfer_with_tree(&lc, &self.level_set_cam, &self.level_set_tree);
        }
        let depth_degenerate = cfg.w_depth > 0.0 && depth_pixels == 0;
        LossTerms {
            depth,
            depth_pixels,
            chamfer: chamfer_value,
            total: cfg.w_depth * depth + cfg.w_chamfer * chamfer_value,
            depth_degenerate,
            chamfer_degenerate,
        }
    }

    /// One ICP step from `ta`: closest-point correspondences on the moved
    /// surface, then a closed-form refit. Returns the new transform and
    /// the matched face per target.
    fn icp_step(&self, ta: &AffineParams) -> Option<(AffineParams, Vec<usize>, f64)> {
        if self.icp_targets.len() < 4 {
            return None;
        }
        let moved = ta.apply_mesh(self.mesh);
        let faces = moved.faces().len();
        let bvh = TriangleBvh::build((0..faces).map(|f| moved.triangle(f)).collect(), (0..faces).collect());
        let matches: Vec<(usize, [f64; 3], f64)> = self
            .icp_targets
            .par_iter()
            .map(|q| match bvh.closest_within(q, f64::INFINITY) {
                RadiusQuery::Hit(h) => (h.face, h.bary, h.distance),
                RadiusQuery::Miss { .. } => unreachable!("unbounded query on a nonempty mesh"),
            })
            .collect();
        // trim gross outliers: pairs much farther than the typical residual
        let mut dists: Vec<f64> = matches.iter().map(|m| m.2).collect();
        dists.sort_by(f64::total_cmp);
        let median = dists[dists.len() / 2];
        let cutoff = (3.0 * median).max(1e-6);
        let normals: Vec<Vec3> = (0..faces)
            .map(|f| {
                let [a, b, c] = moved.triangle(f);
                (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_else(Vec3::zeros)
            })
            .collect();
        let mut src = Vec::with_capacity(matches.len());
        let mut dst = Vec::with_capacity(matches.len());
        let mut nrm = Vec::with_capacity(matches.len());
        let mut sq = 0.0;
        for ((face, bary, d), q) in matches.iter().zip(&self.icp_targets) {
            if *d > cutoff {
                continue;
            }
            let [a, b, c] = self.mesh.triangle(*face);
            src.push(barycentric_point(bary, &a, &b, &c));
            dst.push(*q);
            nrm.push(normals[*face]);
            sq += d * d;
        }
        let rms = (sq / src.len().max(1) as f64).sqrt();
        let fit = fit_affine_point_plane(&src, &dst, &nrm, self.cfg.icp_lambda).ok()?;
        Some((fit, matches.iter().map(|m| m.0).collect(), rms))
    }
}

/// Objective value at `ta` for a freshly built problem.
pub fn total_loss<F: DensityField + ?Sized>(
    ta: &AffineParams,
    mesh: &Mesh,
    field: &F,
    rig: &CameraRig,
    cfg: &AlignConfig,
) -> Result<LossTerms> {
    Ok(AlignmentProblem::new(mesh, field, rig, cfg)?.evaluate(ta))
}

fn max_abs_diff(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Two-phase alignment from the identity. Never returns a transform whose
/// loss exceeds the identity's.
pub fn optimize_alignment<F: DensityField + ?Sized>(
    mesh: &Mesh,
    field: &F,
    rig: &CameraRig,
    cfg: &AlignConfig,
) -> Result<(AffineParams, AlignmentReport)> {
    let problem = AlignmentProblem::new(mesh, field, rig, cfg)?;
    let identity = AffineParams::identity();
    let initial = problem.evaluate(&identity);
    let mut trace = Vec::new();

    // Phase 1
    let mut current = identity;
    let mut icp_iterations = 0;
    let mut prev_faces: Option<Vec<usize>> = None;
    let mut icp_converged = problem.icp_targets.len() < 4;
    while icp_iterations < cfg.icp_iterations && !icp_converged {
        let Some((next, faces, _rms)) = problem.icp_step(&current) else { break };
        icp_iterations += 1;
        if !next.is_valid() {
            break;
        }
        let delta = max_abs_diff(&next.to_array(), &current.to_array());
        icp_converged = delta < cfg.icp_tol || prev_faces.as_ref() == Some(&faces);
        current = next;
        prev_faces = Some(faces);
        trace.push(problem.evaluate(&current).total);
    }
    // the last iterate, not the lowest-loss one: the loss minimum sits
    // off the true pose by the field's depth bias
    let mut best = problem.evaluate(&current);
    if best.total > initial.total {
        current = identity;
        best = initial;
    }

    // Phase 2
    let h = cfg.fd_step;
    let mut x = current.to_array();
    let mut step = [0.0f64; 12];
    for (i, s) in step.iter_mut().enumerate() {
        // translation entries are meters, the rest are dimensionless
        *s = if i % 4 == 3 { 1e-3 } else { 2e-3 };
    }
    let mut prev_grad = [0.0; 12];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let grads: Vec<f64> = (0..12)
            .into_par_iter()
            .map(|i| {
                let mut plus = x;
                let mut minus = x;
                plus[i] += h;
                minus[i] -= h;
                let lp = problem.evaluate(&AffineParams::from_array(&plus)).total;
                let lm = problem.evaluate(&AffineParams::from_array(&minus)).total;
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let mut candidate = x;
        for i in 0..12 {
            let g = grads[i];
            if g * prev_grad[i] > 0.0 {
                step[i] = (step[i] * 1.2).min(1e-2);
            } else if g * prev_grad[i] < 0.0 {
                step[i] = (step[i] * 0.5).max(1e-9);
            }
            if g != 0.0 {
                candidate[i] -= g.signum() * step[i];
            }
        }
        prev_grad.copy_from_slice(&grads);
        let cand = AffineParams::from_array(&candidate);
        let terms = problem.evaluate(&cand);
        if cand.is_valid() && terms.total < best.total {
            let improvement = best.total - terms.total;
            let delta = max_abs_diff(&candidate, &x);
            x = candidate;
            best = terms;
            trace.push(best.total);
            if delta < cfg.param_tol || improvement <= cfg.loss_tol * best.total.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        } else {
            // rejected: shrink every step and retry from the same point
            for s in step.iter_mut() {
                *s *= 0.5;
            }
            prev_grad = [0.0; 12];
            trace.push(best.total);
            if step.iter().all(|s| *s < cfg.param_tol) {
                converged = true;
                break;
            }
        }
    }
    let transform = AffineParams::from_array(&x);
    let report = AlignmentReport {
        depth_loss: best.depth,
        chamfer_loss: best.chamfer,
        total_loss: best.total,
        initial_loss: initial.total,
        depth_pixels: best.depth_pixels,
        depth_degenerate: best.depth_degenerate,
        chamfer_degenerate: best.chamfer_degenerate,
        iterations: icp_iterations + iterations,
        icp_iterations,
        converged,
        trace,
        transform: transform.to_array(),
    };
    Ok((transform, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        let one = |x: &[Vec3], y: &[Vec3]| -> f64 {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
                .sum()
        };
        one(a, b) + one(b, a)
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn chamfer_examples() {
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 50);
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
        assert!(chamfer(&[], &c).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = random_cloud(&mut rng, 200);
            let b = random_cloud(&mut rng, 200);
            assert!((chamfer(&a, &b).unwrap() - brute_chamfer(&a, &b)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_and_translation_invariant(seed in any::<u64>(), t in prop::array::uniform3(-5.0f64..5.0)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, 30);
            let b = random_cloud(&mut rng, 40);
            let ab = chamfer(&a, &b).unwrap();
            prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            let t = Vec3::from(t);
            let at: Vec<Vec3> = a.iter().map(|p| p + t).collect();
            let bt: Vec<Vec3> = b.iter().map(|p| p + t).collect();
            prop_assert!((chamfer(&at, &bt).unwrap() - ab).abs() < 1e-9);
        }

        #[test]
        fn closed_form_step_recovers_affine(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = random_cloud(&mut rng, 4 + (seed % 20) as usize);
            let mut p = [0.0; 12];
            for v in p.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let truth = AffineParams::from_array(&p);
            let dst: Vec<Vec3> = src.iter().map(|x| truth.apply(x)).collect();
            let fit = fit_affine(&src, &dst).unwrap();
            prop_assert!(max_abs_diff(&fit.to_array(), &truth.to_array()) < 1e-9);
            let normals: Vec<Vec3> = src.iter().map(|x| (x + Vec3::new(0.1, 0.2, 0.3)).normalize()).collect();
            let fit = fit_affine_point_plane(&src, &dst, &normals, 0.01).unwrap();
            prop_assert!(max_abs_diff(&fit.to_array(), &truth.to_array()) < 1e-9);
        }
    }

    #[test]
    fn chamfer_weight_zero_is_pure_depth() {
        use crate::headmodel::{builtin_head, mesh_to_density};
        let mesh = builtin_head(0, 0, 3).neutral_mesh();
        let field = mesh_to_density(&mesh, 0.01, 400.0).unwrap();
        let rig = CameraRig::frontal(20.0, 32, 32).unwrap();
        let mut cfg = AlignConfig { resolution: 32, w_chamfer: 0.0, w_depth: 2.0, ..Default::default() };
        cfg.march.n_samples = 256;
        let t = AffineParams { a: Mat3::identity() * 1.02, b: Vec3::new(0.0, 0.01, 0.0) };
        let problem = AlignmentProblem::new(&mesh, &field, &rig, &cfg).unwrap();
        let terms = problem.evaluate(&t);
        let raster = rasterize(&t.apply_mesh(&mesh), &rig.with_resolution(32, 32).unwrap());
        let d = depth_loss(problem.generated_depth(), &raster.depth).unwrap();
        assert_eq!(terms.total, 2.0 * d.value);
        assert_eq!(terms.chamfer, 0.0);
        assert!(!terms.depth_degenerate && d.count > 0);
    }

    #[test]
    fn config_validation() {
        assert!(AlignConfig::default().validate().is_ok());
        assert!(AlignConfig { w_depth: 0.0, w_chamfer: 0.0, ..Default::default() }.validate().is_err());
        assert!(AlignConfig { w_depth: -1.0, ..Default::default() }.validate().is_err());
        assert!(AlignConfig { resolution: 8, ..Default::default() }.validate().is_err());
        let json = r#"{"w_depth": 1.0, "bogus": 2}"#;
        assert!(serde_json::from_str::<AlignConfig>(json).is_err());
    }

    #[test]
    fn coplanar_fit_rejected() {
        let src: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert!(fit_affine(&src, &src).is_err());
    }

    #[test]
    fn depth_loss_examples() {
        let a = DepthMap::from_options(2, 2, [Some(1.0), Some(2.0), None, Some(3.0)]);
        assert_eq!(depth_loss(&a, &a).unwrap(), DepthLoss { value: 0.0, count: 3 });
        let b = DepthMap::from_options(2, 2, [Some(1.1), Some(2.1), Some(5.0), Some(3.1)]);
        let d = depth_loss(&b, &a).unwrap();
        assert_eq!(d.count, 3);
        assert!((d.value - 0.03).abs() < 1e-12);
        let c = DepthMap::from_options(2, 2, [None, None, Some(1.0), None]);
        let d = depth_loss(&a, &c).unwrap();
        assert!(d.degenerate() && d.value == 0.0);
        assert!(depth_loss(&a, &DepthMap::background(3, 1)).is_err());
    }

    #[test]
    fn affine_array_round_trip_and_compose() {
        let r = Rotation3::new(Vec3::new(0.1, 0.2, -0.3));
        let t = AffineParams { a: r.matrix() * 1.05, b: Vec3::new(0.01, -0.02, 0.03) };
        assert_eq!(AffineParams::from_array(&t.to_array()), t);
        let x = Vec3::new(0.3, -0.1, 0.7);
        let c = t.compose(&t);
        assert!((c.apply(&x) - t.apply(&t.apply(&x))).norm() < 1e-15);
        assert!(t.is_valid());
    }
}
