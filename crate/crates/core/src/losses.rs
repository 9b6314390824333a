//! Per-task training losses, the weighted multi-task sum and the affine
//! equivariance (SSL) loss.
//!
//! Every per-task loss is a mean over valid elements and reports how many
//! elements entered it. Warps use the sampling-grid convention: the output
//! at normalized position `p` reads the input at `M·[p, 1]`, with pixel
//! centers at `(2i + 1)/n − 1`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sample locations within this of an integer pixel coordinate snap to it.
const SNAP_EPS: f64 = 1e-9;

/// `C × H × W` grid of finite values, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Domain(format!("feature map dims must be positive, got {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Dimension { what: "feature map data", expected: channels * height * width, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature map values must be finite".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Mean over valid elements plus the element count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedMean {
    pub value: f64,
    pub count: usize,
}

impl MaskedMean {
    fn from_sum(sum: f64, count: usize) -> Self {
        Self { value: if count == 0 { 0.0 } else { sum / count as f64 }, count }
    }

    /// No valid elements; `value` is 0.
    pub fn degenerate(&self) -> bool {
        self.count == 0
    }
}

fn check_mask(mask: Option<&[bool]>, n: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != n => Err(Error::Dimension { what: "mask", expected: n, actual: m.len() }),
        _ => Ok(()),
    }
}

fn masked(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// Mean of `|pred − gt|` over masked pixels.
pub fn l1_depth(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<MaskedMean> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension { what: "depth grid", expected: gt.len(), actual: pred.len() });
    }
    check_mask(mask, gt.len())?;
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..gt.len() {
        if masked(mask, i) {
            sum += (pred[i] - gt[i]).abs();
            count += 1;
        }
    }
    Ok(MaskedMean::from_sum(sum, count))
}

/// Mean of `−log softmax(logits)[label]` over masked pixels.
pub fn cross_entropy_seg(logits: &FeatureMap, labels: &[usize], mask: Option<&[bool]>) -> Result<MaskedMean> {
    let (c, h, w) = logits.dims();
    let n = h * w;
    if labels.len() != n {
        return Err(Error::Dimension { what: "label grid", expected: n, actual: labels.len() });
    }
    check_mask(mask, n)?;
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &label) in labels.iter().enumerate() {
        if !masked(mask, i) {
            continue;
        }
        if label >= c {
            return Err(Error::Domain(format!("label {label} at pixel {i} is not below the class count {c}")));
        }
        let logit = |k: usize| logits.data[k * n + i];
        let max = (0..c).map(logit).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..c).map(|k| (logit(k) - max).exp()).sum::<f64>().ln();
        sum += lse - logit(label);
        count += 1;
    }
    Ok(MaskedMean::from_sum(sum, count))
}

/// Mean Euclidean distance over visible keypoints.
pub fn l2_keypoints(pred: &[[f64; 2]], gt: &[[f64; 2]], visible: &[bool]) -> Result<MaskedMean> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension { what: "keypoints", expected: gt.len(), actual: pred.len() });
    }
    check_mask(Some(visible), gt.len())?;
    let mut sum = 0.0;
    let mut count = 0;
    for ((p, g), &v) in pred.iter().zip(gt).zip(visible) {
        if v {
            sum += (p[0] - g[0]).hypot(p[1] - g[1]);
            count += 1;
        }
    }
    Ok(MaskedMean::from_sum(sum, count))
}

/// One value per task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerTask {
    pub seg: f64,
    pub depth: f64,
    pub kp: f64,
}

impl PerTask {
    pub fn new(seg: f64, depth: f64, kp: f64) -> Self {
        Self { seg, depth, kp }
    }

    fn values(&self) -> [f64; 3] {
        [self.seg, self.depth, self.kp]
    }
}

/// `(1/N)·Σₙ Σₜ λₙᵗ·Lₙᵗ` over `N = losses.len()` samples.
pub fn task_loss(losses: &[PerTask], weights: &[PerTask]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::Dimension { what: "task weights", expected: losses.len(), actual: weights.len() });
    }
    if losses.is_empty() {
        return Err(Error::Domain("task loss needs at least one sample".into()));
    }
    let mut total = 0.0;
    for (l, w) in losses.iter().zip(weights) {
        for (li, wi) in l.values().into_iter().zip(w.values()) {
            if !(wi >= 0.0) {
                return Err(Error::Domain(format!("task weights must be nonnegative, got {wi}")));
            }
            total += wi * li;
        }
    }
    Ok(total / losses.len() as f64)
}

/// 2×3 affine map in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineWarp {
    pub m: [[f64; 3]; 2],
}

impl AffineWarp {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("warp entries must be finite".into()));
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::Domain("warp linear part is singular".into()));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    /// Output pixel `(x, y)` reads input pixel `(x + dx, y + dy)`.
    pub fn pixel_translation(dx: f64, dy: f64, width: usize, height: usize) -> Self {
        Self { m: [[1.0, 0.0, 2.0 * dx / width as f64], [0.0, 1.0, 2.0 * dy / height as f64]] }
    }

    /// Rotation by `deg` about the image center (normalized coordinates).
    pub fn rotation_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self { m: [[c, -s, 0.0], [s, c, 0.0]] }
    }

    pub fn inverse(&self) -> Self {
        let [[a, b, tx], [c, d, ty]] = self.m;
        let det = a * d - b * c;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Self { m: [[ia, ib, -(ia * tx + ib * ty)], [ic, id, -(ic * tx + id * ty)]] }
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [[a, b, tx], [c, d, ty]] = self.m;
        (a * x + b * y + tx, c * x + d * y + ty)
    }
}

/// Resampled map plus the positions whose sample fell inside the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Warped {
    pub map: FeatureMap,
    pub mask: Vec<bool>,
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v
    }
}

/// Bilinear resampling with zero padding.
pub fn warp(input: &FeatureMap, eps: &AffineWarp) -> Warped {
    let (ch, h, w) = input.dims();
    let mut data = vec![0.0; ch * h * w];
    let mut mask = vec![false; h * w];
    for y in 0..h {
        let yn = (2.0 * y as f64 + 1.0) / h as f64 - 1.0;
        for x in 0..w {
            let xn = (2.0 * x as f64 + 1.0) / w as f64 - 1.0;
            let (sx, sy) = eps.apply(xn, yn);
            let px = snap(((sx + 1.0) * w as f64 - 1.0) / 2.0);
            let py = snap(((sy + 1.0) * h as f64 - 1.0) / 2.0);
            if !(px.is_finite() && py.is_finite()) {
                continue;
            }
            mask[y * w + x] = px >= 0.0 && py >= 0.0 && px <= (w - 1) as f64 && py <= (h - 1) as f64;
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for (tx, ty, wt) in taps {
                if wt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                    continue;
                }
                let (tx, ty) = (tx as usize, ty as usize);
                for c in 0..ch {
                    data[(c * h + y) * w + x] += wt * input.get(c, ty, tx);
                }
            }
        }
    }
    Warped { map: FeatureMap { channels: ch, height: h, width: w, data }, mask }
}

/// Maps a 3-channel image to a feature map with the same spatial size.
pub trait Encoder {
    fn out_channels(&self) -> usize;
    fn encode(&self, x: &FeatureMap) -> FeatureMap;
}

/// Pass-through.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEncoder;

impl Encoder for IdentityEncoder {
    fn out_channels(&self) -> usize {
        3
    }

    fn encode(&self, x: &FeatureMap) -> FeatureMap {
        x.clone()
    }
}

/// Per-pixel affine channel mix: `out = W·in + bias`, then optionally `tanh`.
#[derive(Clone, Debug)]
pub struct PointwiseEncoder {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub tanh: bool,
}

impl Encoder for PointwiseEncoder {
    fn out_channels(&self) -> usize {
        self.weights.len()
    }

    fn encode(&self, x: &FeatureMap) -> FeatureMap {
        let (_, h, w) = x.dims();
        FeatureMap::from_fn(self.weights.len(), h, w, |o, y, xx| {
            let mut v = self.bias.get(o).copied().unwrap_or(0.0);
            for (i, wt) in self.weights[o].iter().enumerate().take(x.channels) {
                v += wt * x.get(i, y, xx);
            }
            if self.tanh {
                v.tanh()
            } else {
                v
            }
        })
        .expect("dims come from a valid map")
    }
}

/// Separable `[1 2 1]/4` blur per channel, borders clamped.
#[derive(Clone, Copy, Debug, Default)]
pub struct BlurEncoder;

impl Encoder for BlurEncoder {
    fn out_channels(&self) -> usize {
        3
    }

    fn encode(&self, x: &FeatureMap) -> FeatureMap {
        let (c, h, w) = x.dims();
        let k = [0.25, 0.5, 0.25];
        FeatureMap::from_fn(c, h, w, |ch, y, xx| {
            let mut v = 0.0;
            for (dy, ky) in k.iter().enumerate() {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                for (dx, kx) in k.iter().enumerate() {
                    let xs = (xx + dx).saturating_sub(1).min(w - 1);
                    v += ky * kx * x.get(ch, yy, xs);
                }
            }
            v
        })
        .expect("dims come from a valid map")
    }
}

/// Mean over positions valid in both warps of `‖E(ε(x)) − ε(E(x))‖₂`,
/// the norm taken across channels.
pub fn ssl_loss<E: Encoder + ?Sized>(encoder: &E, x: &FeatureMap, eps: &AffineWarp) -> Result<MaskedMean> {
    if x.channels != 3 {
        return Err(Error::Dimension { what: "encoder input channels", expected: 3, actual: x.channels });
    }
    let warped_in = warp(x, eps);
    let a = encoder.encode(&warped_in.map);
    let encoded = encoder.encode(x);
    let expected = (encoder.out_channels(), x.height, x.width);
    for got in [a.dims(), encoded.dims()] {
        if got != expected {
            return Err(Error::Domain(format!(
                "encoder produced {}x{}x{}, declared {}x{}x{}",
                got.0, got.1, got.2, expected.0, expected.1, expected.2
            )));
        }
    }
    let b = warp(&encoded, eps);
    let n = x.height * x.width;
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..n {
        if !(warped_in.mask[i] && b.mask[i]) {
            continue;
        }
        let d2: f64 = (0..expected.0).map(|c| (a.data[c * n + i] - b.map.data[c * n + i]).powi(2)).sum();
        sum += d2.sqrt();
        count += 1;
    }
    Ok(MaskedMean::from_sum(sum, count))
}
