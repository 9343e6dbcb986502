//! Procedural signed-distance scenes and the SDF-to-opacity transform.
//!
//! Signed distances are negative inside surfaces. Every primitive is a true
//! SDF (or a smooth union of true SDFs), so the field is 1-Lipschitz.

use crate::error::{Error, Result};
use crate::geom::{Dir3, Point3};

pub type Rgb = [f64; 3];

/// Dimension of the analytic geometry feature carried alongside each sample.
pub const FEATURE_DIM: usize = 8;

pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 1e-1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSample {
    pub s: f64,
    pub beta: f64,
    pub radiance: Rgb,
    pub f_geo: [f64; FEATURE_DIM],
}

/// Laplace-CDF opacity: `(1/β)·½e^{s/β}` for `s ≤ 0`, `(1/β)(1 − ½e^{−s/β})` otherwise.
///
/// The argument follows the density convention (large where `s > 0`); scene
/// distances are negative inside, so renderers call [`sdf_opacity`].
pub fn laplace_density(s: f64, beta: f64) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    Ok(laplace_density_unchecked(s, beta))
}

#[inline]
pub(crate) fn laplace_density_unchecked(s: f64, beta: f64) -> f64 {
    let inv = 1.0 / beta;
    if s <= 0.0 {
        inv * 0.5 * (s * inv).exp()
    } else {
        inv * (1.0 - 0.5 * (-s * inv).exp())
    }
}

/// Derivative of [`laplace_density`] with respect to `beta`.
#[inline]
pub fn laplace_density_dbeta(s: f64, beta: f64) -> f64 {
    let inv = 1.0 / beta;
    if s <= 0.0 {
        // d/dβ [ e^{s/β} / (2β) ]
        let e = (s * inv).exp();
        -0.5 * e * inv * inv * (1.0 + s * inv)
    } else {
        let e = (-s * inv).exp();
        // d/dβ [ (1 - e^{-s/β}/2) / β ]
        -inv * inv * (1.0 - 0.5 * e) - 0.5 * e * s * inv * inv * inv
    }
}

/// Opacity at signed distance `d` (negative inside). Non-increasing in `d`.
#[inline]
pub fn sdf_opacity(d: f64, beta: f64) -> f64 {
    laplace_density_unchecked(-d, beta)
}

/// Maps an unconstrained scalar to a variance in `(1e-4, 0.0199)`, equal to 0.01 at zero.
pub fn beta_activation(beta_pre: f64) -> f64 {
    0.01 + (2.0 * beta_pre).tanh() * (0.01 - 0.0001)
}

pub fn beta_activation_grad(beta_pre: f64) -> f64 {
    let t = (2.0 * beta_pre).tanh();
    2.0 * (1.0 - t * t) * (0.01 - 0.0001)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    fn eval(&self, p: Point3) -> (f64, Point3) {
        let q = p - self.center;
        let len = q.length();
        let grad = if len > 0.0 { q * (1.0 / len) } else { Point3::new(0.0, 0.0, 1.0) };
        (len - self.radius, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Torus {
    pub center: Point3,
    pub axis: Dir3,
    pub major: f64,
    pub minor: f64,
}

impl Torus {
    fn eval(&self, p: Point3) -> (f64, Point3) {
        let n = self.axis.as_vec();
        let q = p - self.center;
        let along = q.dot(n);
        let radial = q - n * along;
        let rlen = radial.length();
        let rdir = if rlen > 0.0 { radial * (1.0 / rlen) } else { Point3::ZERO };
        let qx = rlen - self.major;
        let qlen = (qx * qx + along * along).sqrt();
        let grad = if qlen > 0.0 { (rdir * qx + n * along) * (1.0 / qlen) } else { n };
        (qlen - self.minor, grad)
    }
}

/// Geometry of a scene. Each variant reports the distance, its gradient and
/// the index of the primitive that dominates at the query point.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Empty,
    /// Half-space `z < offset`, facing the default camera.
    Wall {
        offset: f64,
    },
    Sphere(Sphere),
    TwoSpheres(Sphere, Sphere),
    Torus(Torus),
    /// Polynomial smooth union of a sphere and a torus.
    Blended {
        sphere: Sphere,
        torus: Torus,
        k: f64,
    },
}

impl Shape {
    fn eval(&self, p: Point3) -> (f64, Point3, usize) {
        match self {
            Shape::Empty => (1e3, Point3::new(0.0, 0.0, 1.0), 0),
            Shape::Wall { offset } => (p.z - offset, Point3::new(0.0, 0.0, 1.0), 0),
            Shape::Sphere(s) => {
                let (d, g) = s.eval(p);
                (d, g, 0)
            }
            Shape::TwoSpheres(a, b) => {
                let (da, ga) = a.eval(p);
                let (db, gb) = b.eval(p);
                if da <= db {
                    (da, ga, 0)
                } else {
                    (db, gb, 1)
                }
            }
            Shape::Torus(t) => {
                let (d, g) = t.eval(p);
                (d, g, 0)
            }
            Shape::Blended { sphere, torus, k } => {
                let (a, ga) = sphere.eval(p);
                let (b, gb) = torus.eval(p);
                let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
                let d = b + h * (a - b) - k * h * (1.0 - h);
                // The h-derivative of the blend vanishes, so the gradient is
                // the convex combination of the primitive gradients.
                let g = ga * h + gb * (1.0 - h);
                (d, g, if h >= 0.5 { 0 } else { 1 })
            }
        }
    }
}

/// Spatial variance field. A band `|y - center| < half_width` may carry a
/// different (typically larger, "fuzzy") variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaField {
    pub base: f64,
    pub band: Option<BetaBand>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBand {
    pub center_y: f64,
    pub half_width: f64,
    pub beta: f64,
}

impl BetaField {
    pub fn constant(beta: f64) -> Self {
        BetaField { base: beta, band: None }
    }

    /// 0 for the base region, 1 inside the band.
    pub fn region(&self, p: Point3) -> usize {
        match self.band {
            Some(b) if (p.y - b.center_y).abs() < b.half_width => 1,
            _ => 0,
        }
    }

    pub fn eval(&self, p: Point3) -> f64 {
        match (self.region(p), self.band) {
            (1, Some(b)) => b.beta,
            _ => self.base,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |b: f64| (BETA_MIN..=BETA_MAX).contains(&b);
        if !ok(self.base) || self.band.is_some_and(|b| !ok(b.beta)) {
            return Err(Error::config(format!("beta values must lie in [{BETA_MIN}, {BETA_MAX}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Albedo {
    Solid(Rgb),
    /// Two colors alternating in diagonal stripes of the given spatial frequency.
    Stripes {
        a: Rgb,
        b: Rgb,
        freq: f64,
    },
}

impl Albedo {
    fn eval(&self, p: Point3) -> Rgb {
        match self {
            Albedo::Solid(c) => *c,
            Albedo::Stripes { a, b, freq } => {
                let t = 0.5 + 0.5 * (freq * (p.y + 0.5 * p.x + 0.25 * p.z)).sin();
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
            }
        }
    }
}

/// Lambertian shading plus a Blinn-Phong highlight under one directional light.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    /// One albedo per primitive index.
    pub albedo: Vec<Albedo>,
    pub ambient: f64,
    pub specular: f64,
    pub shininess: f64,
    pub light: Dir3,
}

impl Material {
    fn new(albedo: Vec<Albedo>) -> Self {
        Material {
            albedo,
            ambient: 0.15,
            specular: 0.35,
            shininess: 32.0,
            light: Dir3::new(Point3::new(0.4, 0.6, 0.7)).unwrap(),
        }
    }

    fn shade(&self, p: Point3, normal: Point3, id: usize, view: Dir3) -> Rgb {
        let albedo = self.albedo[id.min(self.albedo.len() - 1)].eval(p);
        let l = self.light.as_vec();
        let n = Dir3::new(normal).map(Dir3::as_vec).unwrap_or(l);
        let diffuse = n.dot(l).max(0.0);
        let spec = match Dir3::new(l + view.as_vec()) {
            Some(h) if diffuse > 0.0 => n.dot(h.as_vec()).max(0.0).powf(self.shininess),
            _ => 0.0,
        };
        let k = self.ambient + (1.0 - self.ambient) * diffuse;
        albedo.map(|a| (a * k + self.specular * spec).clamp(0.0, 1.0))
    }
}

pub const SCENE_NAMES: [&str; 5] = ["sphere", "two-spheres", "torus", "blended-union", "textured-sphere"];

/// Analytic stand-in for a generated radiance field: answers signed distance,
/// variance, view-dependent radiance and a geometry feature at any point.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOracle {
    name: String,
    shape: Shape,
    beta: BetaField,
    material: Material,
}

impl SceneOracle {
    pub fn new(name: impl Into<String>, shape: Shape, beta: BetaField, material: Material) -> Result<Self> {
        beta.validate()?;
        if material.albedo.is_empty() {
            return Err(Error::config("material needs at least one albedo"));
        }
        Ok(SceneOracle { name: name.into(), shape, beta, material })
    }

    /// Builds one of the catalog scenes (plus the `empty` and `wall` test scenes).
    pub fn named(name: &str) -> Result<Self> {
        let beta = BetaField::constant(0.005);
        let solid = |c: Rgb| vec![Albedo::Solid(c)];
        let (shape, beta, albedo) = match name {
            "sphere" => (Shape::Sphere(Sphere { center: Point3::ZERO, radius: 0.6 }), beta, solid([0.85, 0.45, 0.3])),
            "two-spheres" => (
                Shape::TwoSpheres(
                    Sphere { center: Point3::new(-0.22, -0.05, 0.35), radius: 0.38 },
                    Sphere { center: Point3::new(0.3, 0.12, -0.35), radius: 0.5 },
                ),
                beta,
                vec![Albedo::Solid([0.9, 0.35, 0.25]), Albedo::Solid([0.25, 0.5, 0.9])],
            ),
            "torus" => (
                Shape::Torus(Torus {
                    center: Point3::ZERO,
                    axis: Dir3::new(Point3::new(0.0, 1.0, 0.8)).unwrap(),
                    major: 0.55,
                    minor: 0.2,
                }),
                beta,
                solid([0.4, 0.8, 0.45]),
            ),
            "blended-union" => (
                Shape::Blended {
                    sphere: Sphere { center: Point3::new(0.0, -0.1, 0.0), radius: 0.42 },
                    torus: Torus {
                        center: Point3::new(0.0, 0.05, 0.0),
                        axis: Dir3::new(Point3::new(0.2, 1.0, 0.5)).unwrap(),
                        major: 0.6,
                        minor: 0.1,
                    },
                    k: 0.15,
                },
                beta,
                vec![Albedo::Solid([0.8, 0.75, 0.3]), Albedo::Solid([0.55, 0.3, 0.75])],
            ),
            "textured-sphere" => (
                Shape::Sphere(Sphere { center: Point3::ZERO, radius: 0.6 }),
                BetaField { base: 0.005, band: Some(BetaBand { center_y: 0.0, half_width: 0.12, beta: 0.03 }) },
                vec![Albedo::Stripes { a: [0.95, 0.9, 0.8], b: [0.2, 0.3, 0.6], freq: 14.0 }],
            ),
            "empty" => (Shape::Empty, beta, solid([0.0; 3])),
            "wall" => (Shape::Wall { offset: 0.0 }, BetaField::constant(1e-4), solid([0.7, 0.7, 0.7])),
            other => {
                return Err(Error::config(format!(
                    "unknown scene `{other}` (expected one of {}, empty, wall)",
                    SCENE_NAMES.join(", ")
                )))
            }
        };
        SceneOracle::new(name, shape, beta, Material::new(albedo))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn beta_field(&self) -> &BetaField {
        &self.beta
    }

    /// Replaces the whole variance field with a constant.
    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.beta = BetaField::constant(beta);
        self.beta.validate()?;
        Ok(self)
    }

    pub fn with_beta_field(mut self, beta: BetaField) -> Result<Self> {
        beta.validate()?;
        self.beta = beta;
        Ok(self)
    }

    /// Overrides the radius of sphere-based scenes.
    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(Error::config("radius must be positive"));
        }
        match &mut self.shape {
            Shape::Sphere(s) => s.radius = radius,
            Shape::Blended { sphere, .. } => sphere.radius = radius,
            _ => return Err(Error::config(format!("scene `{}` has no radius parameter", self.name))),
        }
        Ok(self)
    }

    pub fn with_wall_offset(mut self, offset: f64) -> Result<Self> {
        match &mut self.shape {
            Shape::Wall { offset: o } => *o = offset,
            _ => return Err(Error::config("only the wall scene has an offset")),
        }
        Ok(self)
    }

    pub fn distance(&self, p: Point3) -> f64 {
        self.shape.eval(p).0
    }

    /// Full query at `p` seen along direction `v` (the ray direction).
    pub fn query(&self, p: Point3, v: Dir3) -> SceneSample {
        let (s, grad, id) = self.shape.eval(p);
        let beta = self.beta.eval(p);
        let radiance = self.material.shade(p, grad, id, -v);
        SceneSample { s, beta, radiance, f_geo: [p.x, p.y, p.z, s, grad.x, grad.y, grad.z, beta] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_sphere() -> SceneOracle {
        SceneOracle::named("sphere").unwrap().with_radius(1.0).unwrap()
    }

    fn z() -> Dir3 {
        Dir3::new(Point3::new(0.0, 0.0, -1.0)).unwrap()
    }

    #[test]
    fn unit_sphere_distances() {
        let s = unit_sphere();
        assert_eq!(s.query(Point3::new(0.0, 0.0, 2.0), z()).s, 1.0);
        assert_eq!(s.query(Point3::ZERO, z()).s, -1.0);
    }

    #[test]
    fn two_spheres_midplane_matches_brute_force_min() {
        let scene = SceneOracle::named("two-spheres").unwrap();
        let Shape::TwoSpheres(a, b) = scene.shape().clone() else { panic!() };
        let mid = (a.center + b.center) * 0.5;
        let axis = b.center - a.center;
        let perp = axis.cross(Point3::new(0.0, 1.0, 0.0));
        for k in [-0.5, 0.0, 0.3, 1.2] {
            let p = mid + perp * k;
            let brute = ((p - a.center).length() - a.radius).min((p - b.center).length() - b.radius);
            assert_eq!(scene.query(p, z()).s, brute);
        }
    }

    #[test]
    fn density_examples() {
        assert_eq!(laplace_density(0.0, 0.01).unwrap(), 50.0);
        let beta = 0.01;
        let pos = laplace_density(10.0 * beta, beta).unwrap();
        let pos_ref = (1.0 - 0.5 * (-10.0f64).exp()) / beta;
        assert!((pos - pos_ref).abs() < 1e-12);
        assert!((pos - 99.99773).abs() < 1e-4);
        let neg = laplace_density(-10.0 * beta, beta).unwrap();
        assert!((neg - 0.5 * (-10.0f64).exp() / beta).abs() < 1e-15);
        assert!((neg - 2.27e-3).abs() < 1e-5);
    }

    #[test]
    fn density_rejects_non_positive_beta() {
        assert!(laplace_density(0.0, 0.0).is_err());
        assert!(laplace_density(0.0, -1.0).is_err());
        assert!(laplace_density(0.0, f64::NAN).is_err());
    }

    #[test]
    fn density_is_continuous_at_the_surface() {
        for beta in [1e-4, 1e-3, 0.01, 0.1] {
            let a = laplace_density(-1e-12, beta).unwrap();
            let b = laplace_density(1e-12, beta).unwrap();
            assert!((a - b).abs() < 1e-6 / beta);
        }
    }

    #[test]
    fn dbeta_matches_finite_differences() {
        for &(s, beta) in &[(0.003, 0.01), (-0.004, 0.01), (0.0, 0.005), (0.02, 0.02)] {
            let h = 1e-8;
            let fd = (laplace_density_unchecked(s, beta + h) - laplace_density_unchecked(s, beta - h)) / (2.0 * h);
            let an = laplace_density_dbeta(s, beta);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{s} {beta}: {fd} vs {an}");
        }
    }

    #[test]
    fn beta_activation_limits() {
        assert_eq!(beta_activation(0.0), 0.01);
        assert!((beta_activation(-50.0) - 0.0001).abs() < 1e-15);
        assert!((beta_activation(50.0) - 0.0199).abs() < 1e-15);
    }

    #[test]
    fn unknown_scene_is_config_error() {
        assert!(matches!(SceneOracle::named("teapot"), Err(Error::Config(_))));
    }

    #[test]
    fn textured_sphere_has_fuzzy_band() {
        let s = SceneOracle::named("textured-sphere").unwrap();
        assert_eq!(s.query(Point3::new(0.6, 0.0, 0.0), z()).beta, 0.03);
        assert_eq!(s.query(Point3::new(0.0, 0.6, 0.0), z()).beta, 0.005);
    }

    #[test]
    fn radiance_depends_on_view_direction() {
        let s = SceneOracle::named("sphere").unwrap();
        let p = Point3::new(0.25, 0.35, 0.4);
        let a = s.query(p, Dir3::new(Point3::new(0.0, 0.0, -1.0)).unwrap()).radiance;
        let b = s.query(p, Dir3::new(Point3::new(-0.6, -0.6, -0.5)).unwrap()).radiance;
        assert_ne!(a, b);
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn fields_are_one_lipschitz(p in arb_point(), q in arb_point(), idx in 0usize..5) {
            let scene = SceneOracle::named(SCENE_NAMES[idx]).unwrap();
            let ds = (scene.distance(p) - scene.distance(q)).abs();
            prop_assert!(ds <= (p - q).length() + 1e-12);
        }

        #[test]
        fn query_is_deterministic_and_in_range(p in arb_point(), idx in 0usize..5) {
            let scene = SceneOracle::named(SCENE_NAMES[idx]).unwrap();
            let a = scene.query(p, z());
            let b = scene.query(p, z());
            prop_assert_eq!(a, b);
            prop_assert!((BETA_MIN..=BETA_MAX).contains(&a.beta));
            prop_assert!(a.radiance.iter().all(|c| (0.0..=1.0).contains(c)));
        }

        #[test]
        fn density_is_monotone(s1 in -0.2f64..0.2, s2 in -0.2f64..0.2, beta in 1e-4f64..0.1) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let a = laplace_density(lo, beta).unwrap();
            let b = laplace_density(hi, beta).unwrap();
            prop_assert!(a <= b);
            prop_assert!(sdf_opacity(lo, beta) >= sdf_opacity(hi, beta));
            prop_assert!(a > 0.0 || lo / beta < -700.0);
            prop_assert!(b < 1.0 / beta || hi / beta > 36.0);
        }

        #[test]
        fn beta_activation_stays_in_range(pre in -1e3f64..1e3) {
            let b = beta_activation(pre);
            prop_assert!((0.0001 - 1e-15..=0.0199 + 1e-15).contains(&b));
        }
    }
}
