//! Central finite-difference checks of the hand-derived gradients.
//!
//! Every check draws a random configuration, contracts the layer output with
//! a random cotangent `r` (so the scalar is `Σ r ⊙ y`) and compares the
//! analytic gradient of that scalar with central differences. Errors are
//! norm-wise per gradient tensor: `‖a − n‖ / max(‖a‖, ‖n‖)`.

use rand::Rng;

use super::layers::{
    cross_entropy, cross_entropy_grad, relu_backward, relu_forward, skip_add, softmax, upsample_backward,
    upsample_forward, upsample_source, Conv, Rect, Tile,
};
use super::net::{ProposalConfig, ProposalInputs, ProposalNet};
use crate::error::Result;
use crate::exec::Executor;
use crate::render::{BinGrid, GridKind};

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub layer: &'static str,
    /// Largest norm-wise relative error over the checked tensors.
    pub max_rel_error: f64,
    /// Entries compared.
    pub entries: usize,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_tile<R: Rng + ?Sized>(rng: &mut R, channels: usize, rect: Rect) -> Tile {
    Tile { channels, rect, data: random_vec(rng, channels * rect.area()) }
}

fn random_window<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Rect {
    let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
    Rect::new(y0, x0, rng.gen_range(1..=h - y0), rng.gen_range(1..=w - x0))
}

/// Central differences of `f` with respect to every entry of `params`.
fn numeric_grad<F: FnMut(&[f64]) -> f64>(params: &[f64], mut f: F) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn finish(layer: &'static str, pairs: &[(&[f64], &[f64])]) -> GradCheck {
    GradCheck {
        layer,
        max_rel_error: pairs.iter().map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max),
        entries: pairs.iter().map(|(a, _)| a.len()).sum(),
    }
}

/// Weights, bias and input gradients of a random 3×3 convolution evaluated
/// over a random output window.
pub fn check_conv<R: Rng + ?Sized>(rng: &mut R) -> Result<GradCheck> {
    let exec = Executor::sequential();
    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let out = random_window(rng, h, w);
    let src = out.grow(1, h, w);
    let mut conv = Conv::zeros(cout, cin);
    conv.weight = random_vec(rng, conv.weight.len());
    conv.bias = random_vec(rng, cout);
    let x = random_tile(rng, cin, src);
    let r = random_tile(rng, cout, out);
    let (dx, grad) = conv.backward(&x, (h, w), &r, true, &exec)?;
    let dx = dx.expect("input gradient requested");
    let scalar = |c: &Conv, x: &Tile| dot(&c.forward(x, (h, w), out, &exec).expect("valid window").data, &r.data);
    let nw = numeric_grad(&conv.weight, |p| scalar(&Conv { weight: p.to_vec(), ..conv.clone() }, &x));
    let nb = numeric_grad(&conv.bias, |p| scalar(&Conv { bias: p.to_vec(), ..conv.clone() }, &x));
    let nx = numeric_grad(&x.data, |p| scalar(&conv, &Tile { data: p.to_vec(), ..x.clone() }));
    Ok(finish("conv", &[(&grad.weight, &nw), (&grad.bias, &nb), (&dx.data, &nx)]))
}

/// Inputs are kept at least `10·FD_STEP` away from the kink.
pub fn check_relu<R: Rng + ?Sized>(rng: &mut R) -> Result<GradCheck> {
    let rect = Rect::full(rng.gen_range(1..=5), rng.gen_range(1..=5));
    let channels = rng.gen_range(1..=3);
    let mut x = random_tile(rng, channels, rect);
    for v in &mut x.data {
        if v.abs() < 10.0 * FD_STEP {
            *v = 10.0 * FD_STEP;
        }
    }
    let r = random_tile(rng, channels, rect);
    let analytic = relu_backward(&relu_forward(&x), &r);
    let nx = numeric_grad(&x.data, |p| dot(&relu_forward(&Tile { data: p.to_vec(), ..x.clone() }).data, &r.data));
    Ok(finish("relu", &[(&analytic.data, &nx)]))
}

pub fn check_upsample<R: Rng + ?Sized>(rng: &mut R) -> Result<GradCheck> {
    let exec = Executor::sequential();
    let (h, w) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
    let out = random_window(rng, 2 * h, 2 * w);
    let src = upsample_source(out, (h, w));
    let channels = rng.gen_range(1..=3);
    let x = random_tile(rng, channels, src);
    let r = random_tile(rng, channels, out);
    let analytic = upsample_backward(&r, (h, w), src, &exec)?;
    let nx = numeric_grad(&x.data, |p| {
        let y = upsample_forward(&Tile { data: p.to_vec(), ..x.clone() }, (h, w), out, &exec).expect("valid window");
        dot(&y.data, &r.data)
    });
    Ok(finish("upsample", &[(&analytic.data, &nx)]))
}

pub fn check_skip_add<R: Rng + ?Sized>(rng: &mut R) -> Result<GradCheck> {
    let rect = Rect::full(rng.gen_range(1..=4), rng.gen_range(1..=4));
    let channels = rng.gen_range(1..=3);
    let (a, b, r) =
        (random_tile(rng, channels, rect), random_tile(rng, channels, rect), random_tile(rng, channels, rect));
    let na = numeric_grad(&a.data, |p| {
        dot(&skip_add(&Tile { data: p.to_vec(), ..a.clone() }, &b).expect("same shape").data, &r.data)
    });
    let nb = numeric_grad(&b.data, |p| {
        dot(&skip_add(&a, &Tile { data: p.to_vec(), ..b.clone() }).expect("same shape").data, &r.data)
    });
    Ok(finish("skip-add", &[(&r.data, &na), (&r.data, &nb)]))
}

fn random_target<R: Rng + ?Sized>(rng: &mut R, channels: usize, rect: Rect) -> Tile {
    let n = rect.area();
    let mut t = Tile { channels, rect, data: (0..channels * n).map(|_| rng.gen::<f64>()).collect() };
    for p in 0..n {
        let s: f64 = (0..channels).map(|k| t.data[k * n + p]).sum();
        for k in 0..channels {
            t.data[k * n + p] /= s;
        }
    }
    t
}

/// Fused softmax + cross-entropy gradient with respect to the logits, with
/// some pixels masked out.
pub fn check_softmax_ce<R: Rng + ?Sized>(rng: &mut R) -> Result<GradCheck> {
    let rect = Rect::full(rng.gen_range(1..=4), rng.gen_range(1..=4));
    let channels = rng.gen_range(2..=8);
    let mut logits = random_tile(rng, channels, rect);
    logits.data.iter_mut().for_each(|v| *v *= 3.0);
    let target = random_target(rng, channels, rect);
    let mut valid: Vec<bool> = (0..rect.area()).map(|_| rng.gen_bool(0.7)).collect();
    valid[0] = true;
    let analytic = cross_entropy_grad(&softmax(&logits), &target, &valid, 1.0);
    let nl = numeric_grad(&logits.data, |p| {
        cross_entropy(&softmax(&Tile { data: p.to_vec(), ..logits.clone() }), &target, &valid)
    });
    Ok(finish("softmax-ce", &[(&analytic.data, &nl)]))
}

/// Every parameter of a small randomized network, through a windowed
/// forward pass and the cross-entropy loss.
pub fn check_network<R: Rng + ?Sized>(rng: &mut R) -> Result<GradCheck> {
    let exec = Executor::sequential();
    let config = ProposalConfig {
        bins: rng.gen_range(3..=8),
        hidden: rng.gen_range(1..=3),
        low_convs: 1,
        mid_convs: rng.gen_range(0..=1),
        high_convs: rng.gen_range(0..=1),
        head_convs: rng.gen_range(1..=2),
    };
    let (h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let mut net = ProposalNet::zeros(config)?;
    for c in net.convs_mut() {
        c.weight = random_vec(rng, c.weight.len()).into_iter().map(|v| 0.6 * v).collect();
        c.bias = random_vec(rng, c.bias.len()).into_iter().map(|v| 0.2 * v).collect();
    }
    let weights = BinGrid {
        bins: config.bins,
        height: h,
        width: w,
        kind: GridKind::Probe,
        data: (0..config.bins * h * w).map(|_| rng.gen::<f64>()).collect(),
    };
    let inputs = ProposalInputs::new(&weights, &random_vec(rng, 3 * h * w), &random_vec(rng, 3 * h * w))?;
    let (oh, ow) = inputs.output_dims();
    let window = random_window(rng, oh, ow);
    let target = random_target(rng, config.bins, window);
    let valid = vec![true; window.area()];
    // The fused gradient ignores the LOG_EPS floor, so keep every probability well above it.
    let mut tape = net.forward_window(&inputs, window, &exec)?;
    while tape.probs.data.iter().cloned().fold(1.0, f64::min) < 1e-6 {
        for c in net.convs_mut() {
            c.weight.iter_mut().for_each(|v| *v *= 0.5);
        }
        tape = net.forward_window(&inputs, window, &exec)?;
    }
    let grads = net.backward(&tape, &cross_entropy_grad(&tape.probs, &target, &valid, 1.0), &exec)?;
    let analytic: Vec<f64> = grads.values().collect();
    let params: Vec<f64> = net.convs().flat_map(|c| c.weight.iter().chain(&c.bias).copied()).collect();
    let numeric = numeric_grad(&params, |p| {
        let mut probe = net.clone();
        let mut it = p.iter();
        for c in probe.convs_mut() {
            c.weight.iter_mut().chain(c.bias.iter_mut()).for_each(|v| *v = *it.next().expect("parameter count"));
        }
        let t = probe.forward_window(&inputs, window, &exec).expect("valid window");
        cross_entropy(&t.probs, &target, &valid)
    });
    Ok(finish("network", &[(&analytic, &numeric)]))
}

/// All checks, one per layer kind plus the whole network.
pub fn check_all<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<GradCheck>> {
    Ok(vec![
        check_conv(rng)?,
        check_relu(rng)?,
        check_upsample(rng)?,
        check_skip_add(rng)?,
        check_softmax_ce(rng)?,
        check_network(rng)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn relative_error_is_normwise() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-15);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let x = [0.3, -0.2];
        let n = numeric_grad(&x, |p| p[0] * p[0] + 3.0 * p[1]);
        assert!(relative_error(&[0.6, 3.0], &n) < 1e-9);
        assert!(relative_error(&[0.6, 2.9], &n) > 1e-3);
    }

    #[test]
    fn every_layer_passes_a_few_configurations() {
        let mut rng = stream_rng(4, 0, 0);
        for _ in 0..3 {
            for c in check_all(&mut rng).unwrap() {
                assert!(c.max_rel_error < 1e-4, "{c:?}");
            }
        }
    }
}
