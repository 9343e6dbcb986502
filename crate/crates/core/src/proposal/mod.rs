//! The high-resolution proposal: supervision targets, a small convolutional
//! upsampler with a softmax head, its hand-derived gradients and training.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod net;
mod optim;
mod target;
mod train;

pub use net::{Gradients, Layer, ProposalConfig, ProposalInputs, ProposalNet, Tape, AUX_CHANNELS, SCALE};
pub use optim::{Adam, AdamConfig};
pub use target::{
    blur, build_target, gaussian_kernel, sampler_loss, suppress_normalize, SupervisionTarget, DEFAULT_BLUR_SIGMA,
    DEFAULT_SUPPRESS_EPS,
};
pub use train::{loss_curve, loss_reduction, windowed_means, StepReport, TrainConfig, Trainer};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::render::{render_bin_weights, render_probe, BinGrid, Camera, GridKind, PixelRect, ProbeJitter};
use crate::scene::SceneOracle;

/// Runs the probe for `camera` at `1/SCALE` resolution and predicts the
/// proposal at the camera's resolution.
pub fn predict(net: &ProposalNet, scene: &SceneOracle, camera: &Camera, exec: &Executor) -> Result<BinGrid> {
    if !camera.width.is_multiple_of(SCALE) || !camera.height.is_multiple_of(SCALE) {
        return Err(Error::shape(format!("image size must be a multiple of {SCALE}")));
    }
    let low = camera.with_resolution(camera.width / SCALE, camera.height / SCALE);
    let probe = render_probe(scene, &low, net.config().bins, ProbeJitter::Midpoints, false, exec)?;
    net.forward(&ProposalInputs::from_probe(&probe)?, exec)
}

/// Ground-truth stand-in for a trained proposal: the cleaned dense bin
/// weights of every pixel, uniform where nothing survives suppression.
pub fn oracle_proposal(
    scene: &SceneOracle,
    camera: &Camera,
    bins: usize,
    blur_sigma: f64,
    suppress_eps: f64,
    exec: &Executor,
) -> Result<BinGrid> {
    let weights = render_bin_weights(scene, camera, PixelRect::full(camera), bins, GridKind::Full, exec)?;
    let target = build_target(&weights, blur_sigma, suppress_eps)?;
    let mut grid = target.grid;
    grid.kind = GridKind::Full;
    let uniform = vec![1.0 / bins as f64; bins];
    for (i, _) in target.empty.iter().enumerate().filter(|(_, &e)| e) {
        grid.set_ray_vector(i, &uniform);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_is_normalized_everywhere() {
        let scene = SceneOracle::named("sphere").unwrap();
        let cam = Camera::default_view(6, 6);
        let p = oracle_proposal(&scene, &cam, 32, 1.0, 5e-3, &Executor::sequential()).unwrap();
        for i in 0..p.pixel_count() {
            assert!((p.ray_vector(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let corner = p.ray_vector(0);
        assert!(corner.iter().all(|&v| (v - 1.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn predict_requires_scalable_size() {
        let net = ProposalNet::zeros(ProposalConfig { bins: 4, hidden: 2, ..ProposalConfig::default() }).unwrap();
        let scene = SceneOracle::named("sphere").unwrap();
        let exec = Executor::sequential();
        assert!(predict(&net, &scene, &Camera::default_view(6, 8), &exec).is_err());
        let p = predict(&net, &scene, &Camera::default_view(8, 4), &exec).unwrap();
        assert_eq!((p.width, p.height, p.bins), (8, 4, 4));
    }
}
