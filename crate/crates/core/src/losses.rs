//! Geometry regularizers evaluated on rendered outputs, and a small
//! optimization loop that tightens a scene's β field under the surface loss.

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::proposal::{Adam, AdamConfig};
use crate::render::{quadrature_weights, Camera, RayBins};
use crate::scene::{beta_activation, beta_activation_grad, laplace_density_dbeta, sdf_opacity, BetaField, SceneOracle};

/// Linear schedule from `start` to `end` over `steps` steps, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl AnnealSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step >= self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * (step as f64 / self.steps as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    pub b_target: AnnealSchedule,
    pub lambda_sampler: f64,
    pub lambda_surface: f64,
    pub lambda_dec: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            b_target: AnnealSchedule { start: 0.01, end: 0.001, steps: 10_000 },
            lambda_sampler: 1.0,
            lambda_surface: 1.0,
            lambda_dec: 1.0,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_target.end.is_finite() && self.b_target.end > 0.0) || !self.b_target.start.is_finite() {
            return Err(Error::config("the annealed B target must end above zero"));
        }
        for w in [self.lambda_sampler, self.lambda_surface, self.lambda_dec] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(format!("loss weights must be finite and nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// `Σ (B - target)²` over the pixels of a B image.
pub fn surface_loss(b: &[f64], target: f64) -> f64 {
    b.iter().map(|&v| (v - target) * (v - target)).sum()
}

/// `Σ exp(-2|s|)` over an SDF tensor.
pub fn decision_loss(sdf: &[f64]) -> f64 {
    sdf.iter().map(|s| (-2.0 * s.abs()).exp()).sum()
}

pub fn total_loss(l_sampler: f64, l_surface: f64, l_dec: f64, cfg: &RegularizerConfig) -> f64 {
    cfg.lambda_sampler * l_sampler + cfg.lambda_surface * l_surface + cfg.lambda_dec * l_dec
}

/// A B image together with its derivatives with respect to the β value of
/// each region of the scene's β field (base, band).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSensitivity {
    pub b: Vec<f64>,
    pub d_beta: Vec<[f64; 2]>,
}

/// Renders the B image with `samples` bin-midpoint samples per ray and
/// differentiates it in forward mode.
pub fn beta_sensitivity(
    scene: &SceneOracle,
    camera: &Camera,
    samples: usize,
    exec: &Executor,
) -> Result<BetaSensitivity> {
    let field = *scene.beta_field();
    let pixels = exec.map(camera.pixel_count(), |i| -> Result<(f64, [f64; 2])> {
        let Some(ray) = camera.ray_at(i) else { return Ok((0.0, [0.0; 2])) };
        let bins = RayBins::new(ray, samples)?;
        let (mut sigma, mut betas, mut regions, mut dsigma) = (vec![], vec![], vec![], vec![]);
        for k in 0..samples {
            let p = ray.at(bins.midpoint(k));
            let d = scene.distance(p);
            let beta = field.eval(p);
            sigma.push(sdf_opacity(d, beta));
            dsigma.push(laplace_density_dbeta(-d, beta));
            betas.push(beta);
            regions.push(field.region(p));
        }
        let deltas = vec![bins.width(); samples];
        let (weights, _) = quadrature_weights(&sigma, &deltas);
        let b: f64 = weights.iter().zip(&betas).map(|(w, beta)| w * beta).sum();
        let mut grad = [0.0; 2];
        for (r, g) in grad.iter_mut().enumerate() {
            // Forward-mode pass for a unit perturbation of region r's β.
            let mut depth = 0.0f64;
            let mut d_depth = 0.0;
            for k in 0..samples {
                let own = regions[k] == r;
                let ds = if own { dsigma[k] } else { 0.0 };
                let t = (-depth).exp();
                let dt = -t * d_depth;
                let e = (-sigma[k] * deltas[k]).exp();
                let dw = dt * (1.0 - e) + t * e * deltas[k] * ds;
                *g += dw * betas[k] + if own { weights[k] } else { 0.0 };
                depth += sigma[k] * deltas[k];
                d_depth += ds * deltas[k];
            }
        }
        Ok((b, grad))
    });
    let pixels = pixels.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BetaSensitivity { b: pixels.iter().map(|p| p.0).collect(), d_beta: pixels.iter().map(|p| p.1).collect() })
}

/// Loss and β-field history of a [`tighten_beta`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct TighteningRun {
    pub losses: Vec<f64>,
    pub betas: Vec<[f64; 2]>,
}

/// Gradient descent (Adam) on the pre-activation β parameters of the scene's
/// base region and band under `surface_loss` against a fixed `target`.
/// Region parameters start at `init_pre` and map through [`beta_activation`].
#[allow(clippy::too_many_arguments)]
pub fn tighten_beta(
    scene: &SceneOracle,
    camera: &Camera,
    target: f64,
    init_pre: [f64; 2],
    steps: usize,
    adam: AdamConfig,
    samples: usize,
    exec: &Executor,
) -> Result<TighteningRun> {
    let mut pre = init_pre.to_vec();
    let mut opt = Adam::with_shapes(adam, &[2])?;
    let mut run = TighteningRun { losses: Vec::with_capacity(steps), betas: Vec::with_capacity(steps) };
    for _ in 0..steps {
        let beta = [beta_activation(pre[0]), beta_activation(pre[1])];
        let base = *scene.beta_field();
        let field = BetaField { base: beta[0], band: base.band.map(|b| crate::scene::BetaBand { beta: beta[1], ..b }) };
        let s = scene.clone().with_beta_field(field)?;
        let sens = beta_sensitivity(&s, camera, samples, exec)?;
        run.losses.push(surface_loss(&sens.b, target));
        run.betas.push(beta);
        let mut grad = [0.0; 2];
        for (b, d) in sens.b.iter().zip(&sens.d_beta) {
            for r in 0..2 {
                grad[r] += 2.0 * (b - target) * d[r];
            }
        }
        let g: Vec<f64> = (0..2).map(|r| grad[r] * beta_activation_grad(pre[r])).collect();
        opt.step_tensors(vec![&mut pre], vec![&g])?;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render_bin_weights, GridKind, PixelRect};

    #[test]
    fn surface_loss_examples() {
        assert_eq!(surface_loss(&[0.01; 4], 0.01), 0.0);
        assert!((surface_loss(&[0.01, 0.01, 0.02, 0.0], 0.01) - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn decision_loss_examples() {
        assert_eq!(decision_loss(&[0.0]), 1.0);
        assert!((decision_loss(&[0.5; 8]) - 8.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!(decision_loss(&[1e3, -1e3]) < 1e-300);
    }

    #[test]
    fn total_loss_examples() {
        let zero =
            RegularizerConfig { lambda_sampler: 0.0, lambda_surface: 0.0, lambda_dec: 0.0, ..Default::default() };
        assert_eq!(total_loss(1.0, 2.0, 3.0, &zero), 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, &RegularizerConfig::default()), 6.0);
    }

    #[test]
    fn anneal_is_linear_then_flat() {
        let s = AnnealSchedule { start: 0.01, end: 0.001, steps: 100 };
        assert_eq!(s.at(0), 0.01);
        assert!((s.at(50) - 0.0055).abs() < 1e-15);
        assert_eq!(s.at(100), 0.001);
        assert_eq!(s.at(1000), 0.001);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RegularizerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.b_target.end = 0.0;
        assert!(cfg.validate().is_err());
        cfg = RegularizerConfig { lambda_dec: f64::NAN, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn opaque_constant_beta_b_image() {
        let beta = 0.004;
        let scene = SceneOracle::named("wall").unwrap().with_beta(beta).unwrap();
        let cam = Camera::default_view(4, 4);
        let sens = beta_sensitivity(&scene, &cam, 256, &Executor::sequential()).unwrap();
        let target = 0.001;
        let expect = 16.0 * (beta - target) * (beta - target);
        assert!((surface_loss(&sens.b, target) - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn b_image_matches_dense_weights() {
        let scene = SceneOracle::named("sphere").unwrap();
        let cam = Camera::default_view(5, 5);
        let exec = Executor::sequential();
        let sens = beta_sensitivity(&scene, &cam, 64, &exec).unwrap();
        let w = render_bin_weights(&scene, &cam, PixelRect::full(&cam), 64, GridKind::Full, &exec).unwrap();
        for i in 0..25 {
            let expect: f64 = w.ray_vector(i).iter().sum::<f64>() * 0.005;
            assert!((sens.b[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sensitivity_matches_finite_differences() {
        let scene = SceneOracle::named("textured-sphere").unwrap();
        let cam = Camera::default_view(6, 6);
        let exec = Executor::sequential();
        let field = *scene.beta_field();
        let sens = beta_sensitivity(&scene, &cam, 48, &exec).unwrap();
        let h = 1e-7;
        let shifted = |db: [f64; 2]| {
            let band = field.band.map(|b| crate::scene::BetaBand { beta: b.beta + db[1], ..b });
            let s = scene.clone().with_beta_field(BetaField { base: field.base + db[0], band }).unwrap();
            beta_sensitivity(&s, &cam, 48, &exec).unwrap().b
        };
        for r in 0..2 {
            let mut e = [0.0; 2];
            e[r] = h;
            let plus = shifted(e);
            e[r] = -h;
            let minus = shifted(e);
            for i in 0..sens.b.len() {
                let fd = (plus[i] - minus[i]) / (2.0 * h);
                let an = sens.d_beta[i][r];
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "pixel {i} region {r}: {fd} vs {an}");
            }
        }
    }
}
