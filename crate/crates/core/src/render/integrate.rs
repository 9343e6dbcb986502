//! Quadrature volume rendering along a single ray.

use crate::error::{Error, Result};
use crate::scene::{sdf_opacity, Rgb, SceneOracle, SceneSample};

use super::camera::Ray;

/// A ray segment split into `count` equal bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayBins {
    ray: Ray,
    count: usize,
}

impl RayBins {
    pub fn new(ray: Ray, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::Domain(format!("need at least 2 bins, got {count}")));
        }
        Ok(RayBins { ray, count })
    }

    pub fn ray(&self) -> &Ray {
        &self.ray
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn width(&self) -> f64 {
        (self.ray.t_far - self.ray.t_near) / self.count as f64
    }

    pub fn edge(&self, k: usize) -> f64 {
        if k >= self.count {
            self.ray.t_far
        } else {
            self.ray.t_near + k as f64 * self.width()
        }
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        self.ray.t_near + (k as f64 + 0.5) * self.width()
    }

    pub fn bin_of(&self, t: f64) -> usize {
        let x = ((t - self.ray.t_near) / self.width()).floor();
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(self.count - 1)
        }
    }
}

/// A depth sample with its quadrature segment length. `reuse` carries a
/// field value computed elsewhere (e.g. by the probe) instead of querying the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub delta: f64,
    pub reuse: Option<SceneSample>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    pub points: Vec<SamplePoint>,
}

impl SampleSet {
    /// Standard segment lengths: distance to the next sample, far plane for the last.
    pub fn from_positions(ts: &[f64], t_far: f64) -> Self {
        let points = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| SamplePoint { t, delta: ts.get(i + 1).copied().unwrap_or(t_far) - t, reuse: None })
            .collect();
        SampleSet { points }
    }

    pub fn with_deltas(ts: &[f64], deltas: &[f64]) -> Result<Self> {
        if ts.len() != deltas.len() {
            return Err(Error::Samples(format!("{} positions but {} deltas", ts.len(), deltas.len())));
        }
        let points = ts.iter().zip(deltas).map(|(&t, &delta)| SamplePoint { t, delta, reuse: None }).collect();
        Ok(SampleSet { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }
}

/// Everything one ray integration produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RayIntegral {
    pub radiance: Rgb,
    /// Volume-rendered variance (one pixel of the B image).
    pub beta: f64,
    pub depth: f64,
    pub opacity: f64,
    pub weights: Vec<f64>,
    pub sdf: Vec<f64>,
    pub betas: Vec<f64>,
    /// Transmittance left after the last sample.
    pub transmittance: f64,
}

/// Quadrature weights `T_i (1 - exp(-σ_i δ_i))` with `T_i = exp(-Σ_{j<i} σ_j δ_j)`.
/// Returns the weights and the final transmittance.
pub fn quadrature_weights(sigmas: &[f64], deltas: &[f64]) -> (Vec<f64>, f64) {
    let mut depth = 0.0f64;
    let mut weights = Vec::with_capacity(sigmas.len());
    for (&sigma, &delta) in sigmas.iter().zip(deltas) {
        let t = (-depth).exp();
        let tau = sigma * delta;
        weights.push(t * -(-tau).exp_m1());
        depth += tau;
    }
    (weights, (-depth).exp())
}

fn check_sorted(ts: impl Iterator<Item = f64>, ray: &Ray) -> Result<()> {
    let slack = 1e-9 * (1.0 + ray.t_far.abs());
    let mut prev = f64::NEG_INFINITY;
    let mut n = 0usize;
    for t in ts {
        if !t.is_finite() || t < ray.t_near - slack || t > ray.t_far + slack {
            return Err(Error::Samples(format!("sample {t} outside [{}, {}]", ray.t_near, ray.t_far)));
        }
        if t < prev {
            return Err(Error::Samples("sample positions must be sorted ascending".into()));
        }
        prev = t;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Samples("empty sample list".into()));
    }
    Ok(())
}

/// Integrates the scene along `ray` at sorted positions `ts`.
pub fn integrate_ray(scene: &SceneOracle, ray: &Ray, ts: &[f64]) -> Result<RayIntegral> {
    check_sorted(ts.iter().copied(), ray)?;
    Ok(composite(scene, ray, &SampleSet::from_positions(ts, ray.t_far)))
}

/// Integrates an arbitrary sample set (explicit segment lengths, optional reused values).
pub fn integrate_samples(scene: &SceneOracle, ray: &Ray, samples: &SampleSet) -> Result<RayIntegral> {
    check_sorted(samples.points.iter().map(|p| p.t), ray)?;
    if samples.points.iter().any(|p| !(p.delta.is_finite() && p.delta >= 0.0)) {
        return Err(Error::Samples("segment lengths must be finite and nonnegative".into()));
    }
    Ok(composite(scene, ray, samples))
}

fn composite(scene: &SceneOracle, ray: &Ray, samples: &SampleSet) -> RayIntegral {
    let n = samples.points.len();
    let mut out = RayIntegral {
        radiance: [0.0; 3],
        beta: 0.0,
        depth: 0.0,
        opacity: 0.0,
        weights: Vec::with_capacity(n),
        sdf: Vec::with_capacity(n),
        betas: Vec::with_capacity(n),
        transmittance: 1.0,
    };
    let mut optical_depth = 0.0f64;
    let mut prev_t = 1.0f64;
    for p in &samples.points {
        let v = p.reuse.unwrap_or_else(|| scene.query(ray.at(p.t), ray.dir));
        let sigma = sdf_opacity(v.s, v.beta);
        let trans = (-optical_depth).exp();
        debug_assert!(trans <= prev_t, "transmittance increased");
        prev_t = trans;
        let tau = sigma * p.delta;
        let w = trans * -(-tau).exp_m1();
        optical_depth += tau;
        for c in 0..3 {
            out.radiance[c] += w * v.radiance[c];
        }
        out.beta += w * v.beta;
        out.depth += w * p.t;
        out.opacity += w;
        out.weights.push(w);
        out.sdf.push(v.s);
        out.betas.push(v.beta);
    }
    out.transmittance = (-optical_depth).exp();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Dir3, Point3};

    fn axis_ray() -> Ray {
        Ray::new(Point3::new(0.0, 0.0, 3.0), Dir3::new(Point3::new(0.0, 0.0, -1.0)).unwrap(), 2.0, 4.0).unwrap()
    }

    #[test]
    fn opaque_single_sample() {
        let (w, t) = quadrature_weights(&[1e9], &[1.0]);
        assert_eq!(w, vec![1.0]);
        assert_eq!(t, 0.0);
        // Same through the scene: a sample deep inside a tight wall.
        let scene = SceneOracle::named("wall").unwrap();
        let out = integrate_ray(&scene, &axis_ray(), &[3.5]).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        let c = scene.query(axis_ray().at(3.5), axis_ray().dir).radiance;
        assert_eq!(out.radiance, c);
    }

    #[test]
    fn vacuum_has_zero_weights() {
        let scene = SceneOracle::named("empty").unwrap();
        let ts: Vec<f64> = (0..16).map(|i| 2.0 + i as f64 / 8.0).collect();
        let out = integrate_ray(&scene, &axis_ray(), &ts).unwrap();
        assert!(out.weights.iter().all(|&w| w == 0.0));
        assert_eq!(out.radiance, [0.0; 3]);
        assert_eq!(out.transmittance, 1.0);
    }

    #[test]
    fn two_sample_hand_evaluation() {
        let ln2 = std::f64::consts::LN_2;
        let (w, t) = quadrature_weights(&[ln2, ln2], &[1.0, 1.0]);
        // w1 = 1·(1 - e^{-ln2}) = 0.5; w2 = e^{-ln2}·(1 - e^{-ln2}) = 0.25
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.25).abs() < 1e-15);
        assert!((t - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty_unsorted_and_out_of_range() {
        let scene = SceneOracle::named("sphere").unwrap();
        let ray = axis_ray();
        assert!(matches!(integrate_ray(&scene, &ray, &[]), Err(Error::Samples(_))));
        assert!(matches!(integrate_ray(&scene, &ray, &[3.0, 2.5]), Err(Error::Samples(_))));
        assert!(matches!(integrate_ray(&scene, &ray, &[1.0]), Err(Error::Samples(_))));
    }

    #[test]
    fn weights_and_transmittance_partition_unity() {
        let scene = SceneOracle::named("two-spheres").unwrap();
        let ray = axis_ray();
        let ts: Vec<f64> = (0..200).map(|i| 2.0 + (i as f64 + 0.5) / 100.0).collect();
        let out = integrate_ray(&scene, &ray, &ts).unwrap();
        let sum: f64 = out.weights.iter().sum();
        assert!((sum + out.transmittance - 1.0).abs() < 1e-6);
        assert!(sum <= 1.0 + 1e-6);
        assert!((out.opacity - sum).abs() < 1e-12);
    }

    #[test]
    fn bins_geometry() {
        let bins = RayBins::new(axis_ray(), 4).unwrap();
        assert_eq!(bins.width(), 0.5);
        assert_eq!(bins.edge(0), 2.0);
        assert_eq!(bins.edge(4), 4.0);
        assert_eq!(bins.midpoint(1), 2.75);
        assert_eq!(bins.bin_of(2.75), 1);
        assert_eq!(bins.bin_of(4.0), 3);
        assert!(RayBins::new(axis_ray(), 1).is_err());
    }
}
