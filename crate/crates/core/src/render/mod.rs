//! Quadrature volume rendering: dense probes, per-pixel sample sets,
//! reference renders and the accumulated-variance (B) image.

mod camera;
mod image;
mod integrate;

pub use camera::{Camera, Ray, BOX_HALF_EXTENT};
pub use image::{encode_gamma, write_file, Image};
pub use integrate::{
    integrate_ray, integrate_samples, quadrature_weights, RayBins, RayIntegral, SamplePoint, SampleSet,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng::{stream, stream_rng};
use crate::sampling::{inverse_cdf_sample, stratified_variates, DiscretePdf};
use crate::scene::{SceneOracle, SceneSample};

/// Default number of depth bins per ray.
pub const DEFAULT_BINS: usize = 192;

/// Which rendering pass a grid of per-ray vectors came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Probe,
    Patch,
    Full,
}

/// `bins × height × width` tensor of per-ray vectors (weights or SDF values).
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub kind: GridKind,
    pub data: Vec<f64>,
}

pub type WeightGrid = BinGrid;
pub type SdfGrid = BinGrid;

impl BinGrid {
    pub fn zeros(bins: usize, height: usize, width: usize, kind: GridKind) -> Self {
        BinGrid { bins, height, width, kind, data: vec![0.0; bins * height * width] }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[(z * self.height + y) * self.width + x]
    }

    /// The vector of pixel `index` (row-major).
    pub fn ray_vector(&self, index: usize) -> Vec<f64> {
        let plane = self.pixel_count();
        (0..self.bins).map(|z| self.data[z * plane + index]).collect()
    }

    pub fn set_ray_vector(&mut self, index: usize, values: &[f64]) {
        let plane = self.pixel_count();
        for (z, &v) in values.iter().enumerate().take(self.bins) {
            self.data[z * plane + index] = v;
        }
    }

    fn from_rays(bins: usize, height: usize, width: usize, kind: GridKind, rays: &[Vec<f64>], fill: f64) -> Self {
        let mut grid = BinGrid { bins, height, width, kind, data: vec![fill; bins * height * width] };
        for (i, v) in rays.iter().enumerate() {
            if !v.is_empty() {
                grid.set_ray_vector(i, v);
            }
        }
        grid
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub fn full(camera: &Camera) -> Self {
        PixelRect { x0: 0, y0: 0, width: camera.width, height: camera.height }
    }
}

/// Per-pixel images from one rendering pass. The background is black;
/// `accumulated_opacity` tells a dark surface apart from a miss.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub radiance: Image,
    pub beta_image: Image,
    pub expected_depth: Image,
    pub accumulated_opacity: Image,
}

impl RenderOutput {
    fn from_pixels(width: usize, height: usize, pixels: &[Option<RayIntegral>]) -> Self {
        let n = width * height;
        let mut radiance = Vec::with_capacity(3 * n);
        let (mut beta, mut depth, mut opacity) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for px in pixels {
            match px {
                Some(r) => {
                    radiance.extend_from_slice(&r.radiance);
                    beta.push(r.beta);
                    depth.push(r.depth);
                    opacity.push(r.opacity);
                }
                None => {
                    radiance.extend_from_slice(&[0.0; 3]);
                    beta.push(0.0);
                    depth.push(0.0);
                    opacity.push(0.0);
                }
            }
        }
        RenderOutput {
            radiance: Image { width, height, channels: 3, data: radiance },
            beta_image: Image { width, height, channels: 1, data: beta },
            expected_depth: Image { width, height, channels: 1, data: depth },
            accumulated_opacity: Image { width, height, channels: 1, data: opacity },
        }
    }
}

/// Renders every pixel with the sample set returned by `sampler(pixel_index, ray)`.
/// Pixels whose ray misses the scene box stay black.
pub fn render_pixels<F>(scene: &SceneOracle, camera: &Camera, exec: &Executor, sampler: F) -> Result<RenderOutput>
where
    F: Fn(usize, &Ray) -> Result<SampleSet> + Sync + Send,
{
    let pixels: Vec<Result<Option<RayIntegral>>> = exec.map(camera.pixel_count(), |i| match camera.ray_at(i) {
        None => Ok(None),
        Some(ray) => {
            let set = sampler(i, &ray)?;
            if set.is_empty() {
                return Ok(None);
            }
            integrate_samples(scene, &ray, &set).map(Some)
        }
    });
    let pixels = pixels.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RenderOutput::from_pixels(camera.width, camera.height, &pixels))
}

/// Renders with caller-supplied per-pixel sample sets (row-major, one per pixel).
pub fn render_full(
    scene: &SceneOracle,
    camera: &Camera,
    samples: &[SampleSet],
    exec: &Executor,
) -> Result<RenderOutput> {
    if samples.len() != camera.pixel_count() {
        return Err(Error::shape(format!("{} sample sets for {} pixels", samples.len(), camera.pixel_count())));
    }
    render_pixels(scene, camera, exec, |i, _| Ok(samples[i].clone()))
}

/// Where probe samples sit inside their bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeJitter {
    Midpoints,
    Stratified { seed: u64 },
}

/// Dense low-resolution pass: radiance image, per-bin weights and SDF values.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub camera: Camera,
    pub radiance: Image,
    pub weights: WeightGrid,
    pub sdf: SdfGrid,
    /// Field values per (pixel, bin), pixel-major; kept only on request.
    pub samples: Option<Vec<SceneSample>>,
}

/// SDF value recorded for rays that miss the scene box.
pub const MISS_SDF: f64 = 1e3;

pub fn render_probe(
    scene: &SceneOracle,
    camera: &Camera,
    bins: usize,
    jitter: ProbeJitter,
    keep_samples: bool,
    exec: &Executor,
) -> Result<Probe> {
    if bins < 2 {
        return Err(Error::Domain("probe needs at least 2 bins".into()));
    }
    let rays = exec.map(camera.pixel_count(), |i| -> Result<Option<(RayIntegral, Vec<SceneSample>)>> {
        let Some(ray) = camera.ray_at(i) else { return Ok(None) };
        let rb = RayBins::new(ray, bins)?;
        let ts: Vec<f64> = match jitter {
            ProbeJitter::Midpoints => (0..bins).map(|k| rb.midpoint(k)).collect(),
            ProbeJitter::Stratified { seed } => {
                let mut rng = stream_rng(seed, stream::PROBE, i as u64);
                (0..bins).map(|k| rb.edge(k) + rng.gen::<f64>() * rb.width()).collect()
            }
        };
        let samples: Vec<SceneSample> =
            if keep_samples { ts.iter().map(|&t| scene.query(ray.at(t), ray.dir)).collect() } else { Vec::new() };
        let r = integrate_ray(scene, &ray, &ts)?;
        Ok(Some((r, samples)))
    });
    let rays = rays.into_iter().collect::<Result<Vec<_>>>()?;
    let (w, h) = (camera.width, camera.height);
    let weights: Vec<Vec<f64>> =
        rays.iter().map(|r| r.as_ref().map(|r| r.0.weights.clone()).unwrap_or_default()).collect();
    let sdf: Vec<Vec<f64>> = rays.iter().map(|r| r.as_ref().map(|r| r.0.sdf.clone()).unwrap_or_default()).collect();
    let integrals: Vec<Option<RayIntegral>> = rays.iter().map(|r| r.as_ref().map(|r| r.0.clone())).collect();
    let samples = keep_samples.then(|| {
        let miss = SceneSample { s: MISS_SDF, beta: 0.01, radiance: [0.0; 3], f_geo: [0.0; 8] };
        rays.iter()
            .flat_map(|r| match r {
                Some((_, s)) => s.clone(),
                None => vec![miss; bins],
            })
            .collect()
    });
    Ok(Probe {
        camera: *camera,
        radiance: RenderOutput::from_pixels(w, h, &integrals).radiance,
        weights: BinGrid::from_rays(bins, h, w, GridKind::Probe, &weights, 0.0),
        sdf: BinGrid::from_rays(bins, h, w, GridKind::Probe, &sdf, MISS_SDF),
        samples,
    })
}

/// Ground-truth bin weights (one sample per bin midpoint) for a pixel rectangle.
pub fn render_bin_weights(
    scene: &SceneOracle,
    camera: &Camera,
    rect: PixelRect,
    bins: usize,
    kind: GridKind,
    exec: &Executor,
) -> Result<WeightGrid> {
    if rect.x0 + rect.width > camera.width || rect.y0 + rect.height > camera.height {
        return Err(Error::shape("pixel rectangle exceeds the image"));
    }
    let rays = exec.map(rect.width * rect.height, |i| -> Result<Vec<f64>> {
        let (x, y) = (rect.x0 + i % rect.width, rect.y0 + i / rect.width);
        let Some(ray) = camera.ray(x, y) else { return Ok(Vec::new()) };
        let rb = RayBins::new(ray, bins)?;
        let ts: Vec<f64> = (0..bins).map(|k| rb.midpoint(k)).collect();
        Ok(integrate_ray(scene, &ray, &ts)?.weights)
    });
    let rays = rays.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BinGrid::from_rays(bins, rect.height, rect.width, kind, &rays, 0.0))
}

/// Stratified-uniform positions over the whole ray.
pub fn uniform_positions<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: &mut R) -> Vec<f64> {
    let span = ray.t_far - ray.t_near;
    stratified_variates(n, rng).into_iter().map(|u| ray.t_near + u * span).collect()
}

/// `n` stratified-uniform samples per pixel.
pub fn render_uniform(
    scene: &SceneOracle,
    camera: &Camera,
    n: usize,
    seed: u64,
    exec: &Executor,
) -> Result<RenderOutput> {
    if n == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    render_pixels(scene, camera, exec, |i, ray| {
        let mut rng = stream_rng(seed, stream::UNIFORM, i as u64);
        Ok(SampleSet::from_positions(&uniform_positions(ray, n, &mut rng), ray.t_far))
    })
}

/// Classic coarse-then-fine sampling: `⌈total/2⌉` stratified-uniform coarse
/// samples, the rest drawn by stratified inverse-CDF sampling of the coarse
/// weights, merged and sorted.
pub fn two_pass_samples<R: Rng + ?Sized>(
    scene: &SceneOracle,
    ray: &Ray,
    total: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    let coarse_n = total.div_ceil(2).max(1);
    let fine_n = total.saturating_sub(coarse_n);
    let coarse = uniform_positions(ray, coarse_n, rng);
    if fine_n == 0 {
        return Ok(SampleSet::from_positions(&coarse, ray.t_far));
    }
    let weights = if coarse_n >= 2 { integrate_ray(scene, ray, &coarse)?.weights } else { vec![0.0; 2] };
    let bins = RayBins::new(*ray, weights.len().max(2))?;
    let pdf = DiscretePdf::from_weights(&weights);
    let u = stratified_variates(fine_n, rng);
    let mut all = coarse;
    all.extend(inverse_cdf_sample(&pdf, &bins, &u));
    all.sort_by(f64::total_cmp);
    Ok(SampleSet::from_positions(&all, ray.t_far))
}

pub fn render_two_pass(
    scene: &SceneOracle,
    camera: &Camera,
    total: usize,
    seed: u64,
    exec: &Executor,
) -> Result<RenderOutput> {
    if total == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    render_pixels(scene, camera, exec, |i, ray| {
        let mut rng = stream_rng(seed, stream::REFERENCE, i as u64);
        two_pass_samples(scene, ray, total, &mut rng)
    })
}

/// Default sample count of the reference render.
pub const REFERENCE_SAMPLES: usize = 384;

/// Pseudo ground truth: two-pass sampling with `total` samples (384 by default).
pub fn render_reference(
    scene: &SceneOracle,
    camera: &Camera,
    total: usize,
    seed: u64,
    exec: &Executor,
) -> Result<RenderOutput> {
    render_two_pass(scene, camera, total, seed, exec)
}
