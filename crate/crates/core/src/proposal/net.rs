use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    relu_backward, relu_forward, skip_add, softmax, upsample_backward, upsample_forward, upsample_source, Conv,
    ConvGrad, Rect, Tile,
};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::render::{BinGrid, GridKind, Probe};

/// Upsampling factor between the probe and the proposal.
pub const SCALE: usize = 4;

/// Extra input channels next to the probe weights: radiance and view direction.
pub const AUX_CHANNELS: usize = 6;

/// Layer counts and widths of a [`ProposalNet`].
///
/// The network runs `low_convs` conv+ReLU blocks at probe resolution,
/// upsamples, runs `mid_convs` blocks, upsamples again, runs `high_convs`
/// blocks, projects to `bins` logits, adds the upsampled probe weights and
/// finishes with `head_convs` convolutions (ReLU between them) before the
/// softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProposalConfig {
    pub bins: usize,
    pub hidden: usize,
    pub low_convs: usize,
    pub mid_convs: usize,
    pub high_convs: usize,
    pub head_convs: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig { bins: 192, hidden: 64, low_convs: 2, mid_convs: 1, high_convs: 0, head_convs: 2 }
    }
}

impl ProposalConfig {
    /// The full-width variant: 256 channels, 13 convolutions.
    pub fn large() -> Self {
        ProposalConfig { bins: 192, hidden: 256, low_convs: 4, mid_convs: 3, high_convs: 1, head_convs: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::config("proposal needs at least 2 bins"));
        }
        if self.hidden == 0 || self.low_convs == 0 || self.head_convs == 0 {
            return Err(Error::config("proposal needs a hidden width and at least one low and one head conv"));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.bins + AUX_CHANNELS
    }

    pub fn conv_count(&self) -> usize {
        self.low_convs + self.mid_convs + self.high_convs + 1 + self.head_convs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    Relu,
    Upsample,
    /// Adds the probe weights, upsampled to the current resolution.
    SkipAdd,
}

/// Channel-major network input at probe resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalInputs {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    /// Probe weights, then radiance (3), then view direction (3).
    pub tile: Tile,
}

impl ProposalInputs {
    pub fn new(weights: &BinGrid, radiance: &[f64], directions: &[f64]) -> Result<Self> {
        let (h, w, z) = (weights.height, weights.width, weights.bins);
        let n = h * w;
        if radiance.len() != 3 * n || directions.len() != 3 * n {
            return Err(Error::shape("radiance and directions must hold 3 values per probe pixel"));
        }
        let mut data = Vec::with_capacity((z + AUX_CHANNELS) * n);
        data.extend_from_slice(&weights.data);
        for src in [radiance, directions] {
            for c in 0..3 {
                data.extend((0..n).map(|p| src[3 * p + c]));
            }
        }
        Ok(ProposalInputs {
            bins: z,
            height: h,
            width: w,
            tile: Tile::from_data(z + AUX_CHANNELS, Rect::full(h, w), data)?,
        })
    }

    pub fn from_probe(probe: &Probe) -> Result<Self> {
        let cam = &probe.camera;
        let directions: Vec<f64> = (0..cam.pixel_count())
            .flat_map(|i| {
                let d = cam.direction(i % cam.width, i / cam.width);
                [d.x(), d.y(), d.z()]
            })
            .collect();
        ProposalInputs::new(&probe.weights, &probe.radiance.data, &directions)
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.height * SCALE, self.width * SCALE)
    }
}

/// Activations recorded by a windowed forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input of every layer followed by the network output (logits).
    acts: Vec<Tile>,
    /// Image size at the input of every layer.
    dims: Vec<(usize, usize)>,
    pub probs: Tile,
}

/// Parameter gradients, one entry per convolution in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub convs: Vec<ConvGrad>,
}

impl Gradients {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.convs.iter().flat_map(|g| g.weight.iter().chain(&g.bias).copied())
    }
}

/// Kept activations, per-layer image sizes and output probabilities.
type ForwardPass = (Vec<Tile>, Vec<(usize, usize)>, Tile);

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalNet {
    config: ProposalConfig,
    layers: Vec<Layer>,
}

impl ProposalNet {
    /// Every convolution zeroed; the softmax output is uniform.
    pub fn zeros(config: ProposalConfig) -> Result<Self> {
        config.validate()?;
        let (z, h) = (config.bins, config.hidden);
        let mut layers = Vec::new();
        let mut c = config.input_channels();
        let block = |layers: &mut Vec<Layer>, count: usize, c: &mut usize| {
            for _ in 0..count {
                layers.push(Layer::Conv(Conv::zeros(h, *c)));
                layers.push(Layer::Relu);
                *c = h;
            }
        };
        block(&mut layers, config.low_convs, &mut c);
        layers.push(Layer::Upsample);
        block(&mut layers, config.mid_convs, &mut c);
        layers.push(Layer::Upsample);
        block(&mut layers, config.high_convs, &mut c);
        layers.push(Layer::Conv(Conv::zeros(z, c)));
        layers.push(Layer::SkipAdd);
        c = z;
        block(&mut layers, config.head_convs - 1, &mut c);
        layers.push(Layer::Conv(Conv::zeros(z, c)));
        Ok(ProposalNet { config, layers })
    }

    /// He-normal hidden layers, a small projection before the skip
    /// connection and a zeroed final layer.
    pub fn init<R: Rng + ?Sized>(config: ProposalConfig, rng: &mut R) -> Result<Self> {
        let mut net = ProposalNet::zeros(config)?;
        let n = net.layers.len();
        let before_skip: Vec<bool> = (0..n).map(|i| matches!(net.layers.get(i + 1), Some(Layer::SkipAdd))).collect();
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let Layer::Conv(conv) = layer else { continue };
            if i + 1 == n {
                continue;
            }
            let fan_in = (conv.in_channels * 9) as f64;
            let std = if before_skip[i] { 0.1 / fan_in.sqrt() } else { (2.0 / fan_in).sqrt() };
            let normal = Normal::new(0.0, std).expect("finite std");
            conv.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        Ok(net)
    }

    pub fn config(&self) -> &ProposalConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv> {
        self.layers.iter().filter_map(|l| if let Layer::Conv(c) = l { Some(c) } else { None })
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv> {
        self.layers.iter_mut().filter_map(|l| if let Layer::Conv(c) = l { Some(c) } else { None })
    }

    pub fn parameter_count(&self) -> usize {
        self.convs().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    fn check_inputs(&self, inputs: &ProposalInputs) -> Result<()> {
        if inputs.bins != self.config.bins || inputs.tile.channels != self.config.input_channels() {
            return Err(Error::shape(format!(
                "network expects {} bins, inputs have {}",
                self.config.bins, inputs.bins
            )));
        }
        if inputs.tile.rect != Rect::full(inputs.height, inputs.width) {
            return Err(Error::shape("network inputs must cover the whole probe"));
        }
        Ok(())
    }

    /// Image size at the input of every layer, plus the output size.
    fn layer_dims(&self, dims: (usize, usize)) -> Vec<(usize, usize)> {
        let mut out = vec![dims];
        let mut d = dims;
        for layer in &self.layers {
            if matches!(layer, Layer::Upsample) {
                d = (2 * d.0, 2 * d.1);
            }
            out.push(d);
        }
        out
    }

    /// Window each layer must produce so that the output covers `target`.
    fn layer_windows(&self, dims: &[(usize, usize)], target: Rect) -> Vec<Rect> {
        let mut wins = vec![target; self.layers.len() + 1];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = wins[i + 1];
            let (h, w) = dims[i];
            wins[i] = match layer {
                Layer::Conv(_) => out.grow(1, h, w),
                Layer::Relu | Layer::SkipAdd => out,
                Layer::Upsample => upsample_source(out, dims[i]),
            };
        }
        wins
    }

    fn skip_source(&self, inputs: &ProposalInputs, out: Rect, exec: &Executor) -> Result<Tile> {
        let levels = self
            .layers
            .iter()
            .take_while(|l| !matches!(l, Layer::SkipAdd))
            .filter(|l| matches!(l, Layer::Upsample))
            .count();
        let mut dims = vec![(inputs.height, inputs.width)];
        for _ in 0..levels {
            let d = dims[dims.len() - 1];
            dims.push((2 * d.0, 2 * d.1));
        }
        let mut wins = vec![out; levels + 1];
        for l in (0..levels).rev() {
            wins[l] = upsample_source(wins[l + 1], dims[l]);
        }
        let mut t = inputs.tile.leading_channels(self.config.bins).crop(wins[0]);
        for l in 0..levels {
            t = upsample_forward(&t, dims[l], wins[l + 1], exec)?;
        }
        Ok(t)
    }

    fn run(&self, inputs: &ProposalInputs, target: Rect, keep: bool, exec: &Executor) -> Result<ForwardPass> {
        self.check_inputs(inputs)?;
        let dims = self.layer_dims((inputs.height, inputs.width));
        let out_dims = dims[dims.len() - 1];
        if target.area() == 0 || target.y1 > out_dims.0 || target.x1 > out_dims.1 {
            return Err(Error::shape("output window lies outside the proposal image"));
        }
        let wins = self.layer_windows(&dims, target);
        let mut acts = Vec::new();
        let mut x = inputs.tile.crop(wins[0]);
        for (i, layer) in self.layers.iter().enumerate() {
            let y = match layer {
                Layer::Conv(conv) => conv.forward(&x, dims[i], wins[i + 1], exec)?,
                Layer::Relu => relu_forward(&x),
                Layer::Upsample => upsample_forward(&x, dims[i], wins[i + 1], exec)?,
                Layer::SkipAdd => skip_add(&x, &self.skip_source(inputs, wins[i + 1], exec)?)?,
            };
            if keep {
                acts.push(x);
            }
            x = y;
        }
        Ok((acts, dims, x))
    }

    /// Per-pixel depth distributions over the whole output image.
    pub fn forward(&self, inputs: &ProposalInputs, exec: &Executor) -> Result<BinGrid> {
        let (h, w) = inputs.output_dims();
        let (_, _, logits) = self.run(inputs, Rect::full(h, w), false, exec)?;
        let probs = softmax(&logits);
        Ok(BinGrid { bins: self.config.bins, height: h, width: w, kind: GridKind::Full, data: probs.data })
    }

    /// Forward pass restricted to the output window `target`, recording what
    /// [`ProposalNet::backward`] needs.
    pub fn forward_window(&self, inputs: &ProposalInputs, target: Rect, exec: &Executor) -> Result<Tape> {
        let (mut acts, dims, logits) = self.run(inputs, target, true, exec)?;
        let probs = softmax(&logits);
        acts.push(logits);
        Ok(Tape { acts, dims, probs })
    }

    /// Parameter gradients given the gradient `upstream` of the loss with
    /// respect to the output logits of `tape`.
    pub fn backward(&self, tape: &Tape, upstream: &Tile, exec: &Executor) -> Result<Gradients> {
        let logits = &tape.acts[tape.acts.len() - 1];
        if upstream.channels != logits.channels || upstream.rect != logits.rect {
            return Err(Error::shape("upstream gradient does not match the output window"));
        }
        let mut g = upstream.clone();
        let mut convs = Vec::new();
        let first_conv = self.layers.iter().position(|l| matches!(l, Layer::Conv(_)));
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.acts[i];
            g = match layer {
                Layer::Conv(conv) => {
                    let need_dx = Some(i) != first_conv;
                    let (dx, grad) = conv.backward(x, tape.dims[i], &g, need_dx, exec)?;
                    convs.push(grad);
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                Layer::Relu => relu_backward(&tape.acts[i + 1], &g),
                Layer::Upsample => upsample_backward(&g, tape.dims[i], x.rect, exec)?,
                Layer::SkipAdd => g,
            };
        }
        convs.reverse();
        Ok(Gradients { convs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};

    fn tiny() -> ProposalConfig {
        ProposalConfig { bins: 5, hidden: 4, low_convs: 1, mid_convs: 1, high_convs: 1, head_convs: 2 }
    }

    fn random_inputs(cfg: &ProposalConfig, h: usize, w: usize, seed: u64) -> ProposalInputs {
        let mut rng = stream_rng(seed, stream::INIT, 99);
        let grid = BinGrid {
            bins: cfg.bins,
            height: h,
            width: w,
            kind: GridKind::Probe,
            data: (0..cfg.bins * h * w).map(|_| rng.gen::<f64>()).collect(),
        };
        let rad: Vec<f64> = (0..3 * h * w).map(|_| rng.gen()).collect();
        let dirs: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ProposalInputs::new(&grid, &rad, &dirs).unwrap()
    }

    fn randomized(cfg: ProposalConfig, seed: u64) -> ProposalNet {
        let mut rng = stream_rng(seed, stream::INIT, 0);
        let mut net = ProposalNet::init(cfg, &mut rng).unwrap();
        for c in net.convs_mut() {
            c.weight.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
            c.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
        }
        net
    }

    #[test]
    fn default_topology_has_six_convs() {
        let net = ProposalNet::zeros(ProposalConfig::default()).unwrap();
        assert_eq!(net.convs().count(), 6);
        assert_eq!(net.layers().iter().filter(|l| matches!(l, Layer::Upsample)).count(), 2);
        assert_eq!(ProposalNet::zeros(ProposalConfig::large()).unwrap().convs().count(), 13);
    }

    #[test]
    fn fresh_network_is_uniform() {
        let cfg = tiny();
        let mut rng = stream_rng(1, stream::INIT, 0);
        let net = ProposalNet::init(cfg, &mut rng).unwrap();
        let out = net.forward(&random_inputs(&cfg, 3, 2, 1), &Executor::sequential()).unwrap();
        assert_eq!((out.height, out.width), (12, 8));
        assert!(out.data.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn window_matches_full_forward() {
        let cfg = tiny();
        let net = randomized(cfg, 2);
        let inputs = random_inputs(&cfg, 5, 4, 2);
        let exec = Executor::sequential();
        let full = net.forward(&inputs, &exec).unwrap();
        for target in [Rect::new(3, 2, 6, 7), Rect::new(0, 0, 20, 16), Rect::new(19, 15, 1, 1)] {
            let tape = net.forward_window(&inputs, target, &exec).unwrap();
            for z in 0..cfg.bins {
                for y in target.y0..target.y1 {
                    for x in target.x0..target.x1 {
                        assert_eq!(tape.probs.at(z, y, x), full.get(z, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_head_normalizes() {
        let cfg = tiny();
        let out = randomized(cfg, 3).forward(&random_inputs(&cfg, 2, 2, 3), &Executor::sequential()).unwrap();
        for i in 0..out.pixel_count() {
            let v = out.ray_vector(i);
            assert!(v.iter().all(|&p| p > 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = randomized(tiny(), 4);
        let other = ProposalConfig { bins: 6, ..tiny() };
        assert!(matches!(net.forward(&random_inputs(&other, 2, 2, 4), &Executor::sequential()), Err(Error::Shape(_))));
        let inputs = random_inputs(&tiny(), 2, 2, 4);
        assert!(net.forward_window(&inputs, Rect::new(0, 0, 9, 1), &Executor::sequential()).is_err());
    }

    #[test]
    fn outputs_do_not_depend_on_other_images() {
        let cfg = tiny();
        let net = randomized(cfg, 5);
        let exec = Executor::sequential();
        let (a, b) = (random_inputs(&cfg, 2, 3, 6), random_inputs(&cfg, 2, 3, 7));
        let first = (net.forward(&a, &exec).unwrap(), net.forward(&b, &exec).unwrap());
        let second = (net.forward(&b, &exec).unwrap(), net.forward(&a, &exec).unwrap());
        assert_eq!(first.0, second.1);
        assert_eq!(first.1, second.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = tiny();
        let net = randomized(cfg, 8);
        let exec = Executor::sequential();
        let tape = net.forward_window(&random_inputs(&cfg, 2, 2, 8), Rect::new(1, 1, 4, 4), &exec).unwrap();
        let zero = Tile::zeros(cfg.bins, tape.probs.rect);
        let g = net.backward(&tape, &zero, &exec).unwrap();
        assert_eq!(g.convs.len(), cfg.conv_count());
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn gradients_are_linear_in_the_upstream() {
        let cfg = tiny();
        let net = randomized(cfg, 9);
        let exec = Executor::sequential();
        let tape = net.forward_window(&random_inputs(&cfg, 2, 2, 9), Rect::new(0, 2, 5, 3), &exec).unwrap();
        let mut rng = stream_rng(9, stream::INIT, 1);
        let up =
            Tile { data: tape.probs.data.iter().map(|_| rng.gen_range(-1.0..1.0)).collect(), ..tape.probs.clone() };
        let double = Tile { data: up.data.iter().map(|v| 2.0 * v).collect(), ..up.clone() };
        let (g1, g2) = (net.backward(&tape, &up, &exec).unwrap(), net.backward(&tape, &double, &exec).unwrap());
        for (a, b) in g1.values().zip(g2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
