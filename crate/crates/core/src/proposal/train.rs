use rand::Rng;

use super::layers::{cross_entropy, cross_entropy_grad, Rect};
use super::net::{ProposalInputs, ProposalNet, SCALE};
use super::optim::{Adam, AdamConfig};
use super::target::{build_target, DEFAULT_BLUR_SIGMA, DEFAULT_SUPPRESS_EPS};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::render::{render_bin_weights, render_probe, Camera, GridKind, PixelRect, ProbeJitter};
use crate::rng::{stream, stream_rng};
use crate::scene::SceneOracle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Probe resolution; the proposal is `SCALE` times larger.
    pub low_res: usize,
    /// Side of the square supervised patch at proposal resolution.
    pub patch: usize,
    pub blur_sigma: f64,
    pub suppress_eps: f64,
    pub adam: AdamConfig,
    /// Training cameras orbit the origin with elevation in `[-max, max]` radians.
    pub max_elevation: f64,
    /// Patch draws per step before giving up on finding a labelled pixel.
    pub patch_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            low_res: 32,
            patch: 16,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            suppress_eps: DEFAULT_SUPPRESS_EPS,
            adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
            max_elevation: 0.5,
            patch_draws: 8,
        }
    }
}

impl TrainConfig {
    pub fn high_res(&self) -> usize {
        self.low_res * SCALE
    }

    pub fn validate(&self) -> Result<()> {
        if self.low_res == 0 || self.patch == 0 || self.patch > self.high_res() {
            return Err(Error::config(format!("patch size {} must lie in [1, {}]", self.patch, self.high_res())));
        }
        if self.blur_sigma < 0.0 || self.suppress_eps < 0.0 || self.patch_draws == 0 {
            return Err(Error::config("blur sigma and suppression threshold must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Cross-entropy before the update; zero when no pixel was labelled.
    pub loss: f64,
    /// Labelled pixels in the patch; zero means the step made no update.
    pub labelled: usize,
}

pub struct Trainer {
    pub net: ProposalNet,
    pub optimizer: Adam,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(net: ProposalNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.adam, &net)?;
        Ok(Trainer { net, optimizer, config })
    }

    pub fn random_camera<R: Rng + ?Sized>(&self, rng: &mut R) -> Camera {
        let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
        let e = self.config.max_elevation;
        let elevation = if e > 0.0 { rng.gen_range(-e..e) } else { 0.0 };
        let n = self.config.high_res();
        Camera::orbit(azimuth, elevation, n, n)
    }

    /// Probe the scene at low resolution, supervise a patch of the proposal
    /// against dense bin weights, take one optimizer step. Patches are
    /// centered on random foreground pixels of the probe.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        scene: &SceneOracle,
        camera: &Camera,
        rng: &mut R,
        exec: &Executor,
    ) -> Result<StepReport> {
        let cfg = self.config;
        let bins = self.net.config().bins;
        if !camera.width.is_multiple_of(SCALE)
            || !camera.height.is_multiple_of(SCALE)
            || cfg.patch > camera.width.min(camera.height)
        {
            return Err(Error::shape(format!(
                "camera {}x{} does not fit the proposal scale {SCALE} and patch {}",
                camera.width, camera.height, cfg.patch
            )));
        }
        let low = camera.with_resolution(camera.width / SCALE, camera.height / SCALE);
        let probe = render_probe(scene, &low, bins, ProbeJitter::Midpoints, false, exec)?;
        let inputs = ProposalInputs::from_probe(&probe)?;
        let mut labelled = None;
        let foreground: Vec<usize> =
            (0..low.pixel_count()).filter(|&i| probe.weights.ray_vector(i).iter().sum::<f64>() > 0.5).collect();
        for _ in 0..cfg.patch_draws {
            let (x0, y0) = patch_origin(camera, &low, &foreground, cfg.patch, rng);
            let rect = PixelRect { x0, y0, width: cfg.patch, height: cfg.patch };
            let weights = render_bin_weights(scene, camera, rect, bins, GridKind::Patch, exec)?;
            let target = build_target(&weights, cfg.blur_sigma, cfg.suppress_eps)?;
            if target.valid_count() > 0 {
                labelled = Some((Rect::new(y0, x0, cfg.patch, cfg.patch), target));
                break;
            }
        }
        let Some((rect, target)) = labelled else { return Ok(StepReport { loss: 0.0, labelled: 0 }) };
        let tape = self.net.forward_window(&inputs, rect, exec)?;
        let (labels, valid) = (target.tile(rect), target.valid());
        let loss = cross_entropy(&tape.probs, &labels, &valid);
        let upstream = cross_entropy_grad(&tape.probs, &labels, &valid, 1.0);
        let grads = self.net.backward(&tape, &upstream, exec)?;
        self.optimizer.update(&mut self.net, &grads)?;
        Ok(StepReport { loss, labelled: target.valid_count() })
    }

    /// Runs `config.steps` steps with a fresh random camera each step.
    /// Step `i` draws from its own stream of `seed`, so runs are reproducible.
    pub fn train<F>(
        &mut self,
        scene: &SceneOracle,
        seed: u64,
        exec: &Executor,
        mut on_step: F,
    ) -> Result<Vec<StepReport>>
    where
        F: FnMut(usize, &StepReport),
    {
        let mut reports = Vec::with_capacity(self.config.steps);
        for step in 0..self.config.steps {
            let mut rng = stream_rng(seed, stream::TRAINING, step as u64);
            let camera = self.random_camera(&mut rng);
            let report = self.train_step(scene, &camera, &mut rng, exec)?;
            on_step(step, &report);
            reports.push(report);
        }
        Ok(reports)
    }
}

/// Top-left corner of a patch centered near a random foreground probe pixel,
/// or anywhere when the probe saw no surface.
fn patch_origin<R: Rng + ?Sized>(
    camera: &Camera,
    low: &Camera,
    foreground: &[usize],
    patch: usize,
    rng: &mut R,
) -> (usize, usize) {
    let (max_x, max_y) = (camera.width - patch, camera.height - patch);
    if foreground.is_empty() {
        return (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y));
    }
    let i = foreground[rng.gen_range(0..foreground.len())];
    let cx = (i % low.width) * SCALE + rng.gen_range(0..SCALE);
    let cy = (i / low.width) * SCALE + rng.gen_range(0..SCALE);
    ((cx.saturating_sub(patch / 2)).min(max_x), (cy.saturating_sub(patch / 2)).min(max_y))
}

/// Losses of the steps that made an update.
pub fn loss_curve(reports: &[StepReport]) -> Vec<f64> {
    reports.iter().filter(|r| r.labelled > 0).map(|r| r.loss).collect()
}

/// Trailing means over `window` consecutive values.
pub fn windowed_means(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// `1 - last/first` over the windowed means; zero when the curve is too short.
pub fn loss_reduction(values: &[f64], window: usize) -> f64 {
    let means = windowed_means(values, window);
    match (means.first(), means.last()) {
        (Some(&first), Some(&last)) if first > 0.0 => 1.0 - last / first,
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposal::net::ProposalConfig;

    fn tiny_trainer(lr: f64) -> Trainer {
        let cfg = ProposalConfig { bins: 12, hidden: 4, low_convs: 1, mid_convs: 0, high_convs: 0, head_convs: 2 };
        let net = ProposalNet::init(cfg, &mut stream_rng(3, stream::INIT, 0)).unwrap();
        let tc = TrainConfig {
            steps: 4,
            low_res: 4,
            patch: 8,
            adam: AdamConfig { lr, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        Trainer::new(net, tc).unwrap()
    }

    #[test]
    fn training_is_reproducible() {
        let scene = SceneOracle::named("two-spheres").unwrap();
        let exec = Executor::sequential();
        let (mut a, mut b) = (tiny_trainer(1e-2), tiny_trainer(1e-2));
        let ra = a.train(&scene, 11, &exec, |_, _| {}).unwrap();
        let rb = b.train(&scene, 11, &exec, |_, _| {}).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.net, b.net);
        assert!(ra.iter().any(|r| r.labelled > 0));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let scene = SceneOracle::named("sphere").unwrap();
        let mut t = tiny_trainer(0.0);
        let before = t.net.clone();
        t.train(&scene, 2, &Executor::sequential(), |_, _| {}).unwrap();
        assert_eq!(t.net, before);
        assert_eq!(t.optimizer.step, 4);
    }

    #[test]
    fn vacuum_steps_make_no_update() {
        let scene = SceneOracle::named("empty").unwrap();
        let mut t = tiny_trainer(1e-2);
        let before = t.net.clone();
        let reports = t.train(&scene, 2, &Executor::sequential(), |_, _| {}).unwrap();
        assert!(reports.iter().all(|r| r.labelled == 0));
        assert_eq!(t.net, before);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let mut t = tiny_trainer(1e-3);
        let cam = Camera::default_view(4, 4);
        let scene = SceneOracle::named("sphere").unwrap();
        let mut rng = stream_rng(0, 0, 0);
        assert!(t.train_step(&scene, &cam, &mut rng, &Executor::sequential()).is_err());
    }

    #[test]
    fn windowed_reduction() {
        let v: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        assert_eq!(windowed_means(&v, 5).len(), 6);
        assert!((loss_reduction(&v, 5) - (1.0 - 3.0 / 8.0)).abs() < 1e-12);
        assert_eq!(loss_reduction(&v, 20), 0.0);
    }
}
