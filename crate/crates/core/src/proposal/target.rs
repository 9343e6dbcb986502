use super::layers::{cross_entropy, Rect, Tile};
use crate::error::{Error, Result};
use crate::render::{BinGrid, GridKind, WeightGrid};

pub const DEFAULT_BLUR_SIGMA: f64 = 1.0;
pub const DEFAULT_SUPPRESS_EPS: f64 = 5e-3;

/// Cleaned per-pixel bin distributions used as training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTarget {
    pub grid: BinGrid,
    /// Pixels whose whole vector was suppressed; they carry no label.
    pub empty: Vec<bool>,
}

impl SupervisionTarget {
    pub fn valid_count(&self) -> usize {
        self.empty.iter().filter(|&&e| !e).count()
    }

    pub(crate) fn tile(&self, rect: Rect) -> Tile {
        Tile { channels: self.grid.bins, rect, data: self.grid.data.clone() }
    }

    pub(crate) fn valid(&self) -> Vec<bool> {
        self.empty.iter().map(|&e| !e).collect()
    }
}

/// Truncated Gaussian of radius `⌈3σ⌉`, normalized to unit sum. `σ = 0`
/// gives the identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Zero-padded 1D convolution with a centered odd kernel.
pub fn blur(v: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    (0..v.len())
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(j, &k)| (i + j).checked_sub(r).and_then(|src| v.get(src)).map(|&x| k * x))
                .sum()
        })
        .collect()
}

/// Zeroes entries below `eps` and rescales to unit sum. Returns false, leaving
/// all zeros, when nothing survives.
pub fn suppress_normalize(v: &mut [f64], eps: f64) -> bool {
    for x in v.iter_mut() {
        if *x < eps {
            *x = 0.0;
        }
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    true
}

/// Blur each ray's weights along the bin axis, suppress small entries and
/// renormalize.
pub fn build_target(weights: &WeightGrid, blur_sigma: f64, suppress_eps: f64) -> Result<SupervisionTarget> {
    if weights.data.iter().any(|&w| w.is_nan() || w < 0.0) {
        return Err(Error::Domain("supervision weights must be nonnegative".into()));
    }
    let kernel = gaussian_kernel(blur_sigma);
    let mut grid = BinGrid { kind: GridKind::Patch, data: vec![0.0; weights.data.len()], ..*weights };
    let mut empty = Vec::with_capacity(weights.pixel_count());
    for i in 0..weights.pixel_count() {
        let mut v = blur(&weights.ray_vector(i), &kernel);
        let ok = suppress_normalize(&mut v, suppress_eps);
        empty.push(!ok);
        grid.set_ray_vector(i, &v);
    }
    Ok(SupervisionTarget { grid, empty })
}

/// Mean cross-entropy between predicted distributions and the labels over
/// labelled pixels.
pub fn sampler_loss(predicted: &BinGrid, target: &SupervisionTarget) -> Result<f64> {
    let t = &target.grid;
    if (predicted.bins, predicted.height, predicted.width) != (t.bins, t.height, t.width) {
        return Err(Error::shape("prediction and target differ in shape"));
    }
    let rect = Rect::full(t.height, t.width);
    let probs = Tile { channels: t.bins, rect, data: predicted.data.clone() };
    Ok(cross_entropy(&probs, &target.tile(rect), &target.valid()))
}
