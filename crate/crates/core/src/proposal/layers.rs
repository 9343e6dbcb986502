//! Channel-major tensor tiles and the layer kernels of the proposal network.
//!
//! Every kernel works on a window: it evaluates its output only over a
//! requested rectangle of the image and reads only the input rectangle that
//! rectangle depends on. Pixels outside the image read as zero (conv padding)
//! or are clamped (bilinear upsampling), exactly as a full-image pass would,
//! so a window of the output is bitwise equal to the same crop of a full pass.

use crate::error::{Error, Result};
use crate::exec::Executor;

pub const KERNEL: usize = 3;

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl Rect {
    pub fn new(y0: usize, x0: usize, height: usize, width: usize) -> Self {
        Rect { y0, x0, y1: y0 + height, x1: x0 + width }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Rect::new(0, 0, height, width)
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.y0 >= self.y0 && other.x0 >= self.x0 && other.y1 <= self.y1 && other.x1 <= self.x1
    }

    /// Grown by `r` on every side, clipped to an `height × width` image.
    pub fn grow(&self, r: usize, height: usize, width: usize) -> Rect {
        Rect {
            y0: self.y0.saturating_sub(r),
            x0: self.x0.saturating_sub(r),
            y1: (self.y1 + r).min(height),
            x1: (self.x1 + r).min(width),
        }
    }
}

/// `channels` planes covering `rect`, each stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub channels: usize,
    pub rect: Rect,
    pub data: Vec<f64>,
}

impl Tile {
    pub fn zeros(channels: usize, rect: Rect) -> Self {
        Tile { channels, rect, data: vec![0.0; channels * rect.area()] }
    }

    pub fn from_data(channels: usize, rect: Rect, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * rect.area() {
            return Err(Error::shape(format!(
                "tile of {} values for {channels} channels over {}x{}",
                data.len(),
                rect.height(),
                rect.width()
            )));
        }
        Ok(Tile { channels, rect, data })
    }

    pub fn plane_len(&self) -> usize {
        self.rect.area()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Value at image coordinates `(y, x)`, which must lie inside `rect`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let r = &self.rect;
        self.data[(c * r.height() + (y - r.y0)) * r.width() + (x - r.x0)]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        let r = self.rect;
        &mut self.data[(c * r.height() + (y - r.y0)) * r.width() + (x - r.x0)]
    }

    pub fn crop(&self, rect: Rect) -> Tile {
        assert!(self.rect.contains(&rect), "crop outside the tile");
        let mut out = Tile::zeros(self.channels, rect);
        let w = rect.width();
        for c in 0..self.channels {
            for y in rect.y0..rect.y1 {
                let src = (c * self.rect.height() + (y - self.rect.y0)) * self.rect.width() + (rect.x0 - self.rect.x0);
                let dst = (c * rect.height() + (y - rect.y0)) * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }

    /// The first `channels` planes.
    pub fn leading_channels(&self, channels: usize) -> Tile {
        Tile { channels, rect: self.rect, data: self.data[..channels * self.plane_len()].to_vec() }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Output columns `[lo, hi)` whose tap `k` lands inside an image of width `n`.
fn valid_span(out0: usize, out1: usize, k: usize, n: usize) -> (usize, usize) {
    let lo = out0.max(1usize.saturating_sub(k));
    let hi = out1.min((n + 1).saturating_sub(k));
    (lo, hi.max(lo))
}

/// 3×3 convolution with zero padding and stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub out_channels: usize,
    pub in_channels: usize,
    /// `[out][in][ky][kx]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients of one [`Conv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Conv {
            out_channels,
            in_channels,
            weight: vec![0.0; out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![0.0; out_channels],
        }
    }

    fn taps(&self, co: usize, ci: usize) -> &[f64] {
        let k = KERNEL * KERNEL;
        let start = (co * self.in_channels + ci) * k;
        &self.weight[start..start + k]
    }

    fn check_input(&self, x: &Tile, out: Rect, dims: (usize, usize)) -> Result<()> {
        if x.channels != self.in_channels {
            return Err(Error::shape(format!("conv expects {} channels, got {}", self.in_channels, x.channels)));
        }
        if out.y1 > dims.0 || out.x1 > dims.1 || !x.rect.contains(&out.grow(1, dims.0, dims.1)) {
            return Err(Error::shape("conv input window does not cover the output window"));
        }
        Ok(())
    }

    /// Evaluates the convolution over `out` for an image of size `dims = (height, width)`.
    pub fn forward(&self, x: &Tile, dims: (usize, usize), out: Rect, exec: &Executor) -> Result<Tile> {
        self.check_input(x, out, dims)?;
        let (h, w) = dims;
        let mut y = Tile::zeros(self.out_channels, out);
        let (ow, xr) = (out.width(), x.rect);
        exec.for_each_chunk(&mut y.data, out.area(), |co, plane| {
            plane.fill(self.bias[co]);
            for ci in 0..self.in_channels {
                let taps = self.taps(co, ci);
                let xp = x.plane(ci);
                for oy in out.y0..out.y1 {
                    let row = &mut plane[(oy - out.y0) * ow..(oy - out.y0 + 1) * ow];
                    for ky in 0..KERNEL {
                        let Some(iy) = (oy + ky).checked_sub(1).filter(|&iy| iy < h) else { continue };
                        let xrow = &xp[(iy - xr.y0) * xr.width()..(iy - xr.y0 + 1) * xr.width()];
                        for kx in 0..KERNEL {
                            let wv = taps[ky * KERNEL + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let (lo, hi) = valid_span(out.x0, out.x1, kx, w);
                            if lo >= hi {
                                continue;
                            }
                            let src = lo + kx - 1 - xr.x0;
                            axpy(&mut row[lo - out.x0..hi - out.x0], wv, &xrow[src..src + (hi - lo)]);
                        }
                    }
                }
            }
        });
        Ok(y)
    }

    /// Gradients given the layer input `x` and the upstream gradient `dy`
    /// (whose rectangle is the forward output window). The input gradient
    /// covers `x.rect` and is skipped when `need_dx` is false.
    pub fn backward(
        &self,
        x: &Tile,
        dims: (usize, usize),
        dy: &Tile,
        need_dx: bool,
        exec: &Executor,
    ) -> Result<(Option<Tile>, ConvGrad)> {
        let out = dy.rect;
        self.check_input(x, out, dims)?;
        if dy.channels != self.out_channels {
            return Err(Error::shape("conv upstream gradient has the wrong channel count"));
        }
        let (h, w) = dims;
        let (ow, xr) = (out.width(), x.rect);
        let bias: Vec<f64> = (0..self.out_channels).map(|co| dy.plane(co).iter().sum()).collect();
        let mut weight = vec![0.0; self.weight.len()];
        let per_out = self.in_channels * KERNEL * KERNEL;
        exec.for_each_chunk(&mut weight, per_out, |co, gw| {
            let dp = dy.plane(co);
            for ci in 0..self.in_channels {
                let xp = x.plane(ci);
                for oy in out.y0..out.y1 {
                    let drow = &dp[(oy - out.y0) * ow..(oy - out.y0 + 1) * ow];
                    for ky in 0..KERNEL {
                        let Some(iy) = (oy + ky).checked_sub(1).filter(|&iy| iy < h) else { continue };
                        let xrow = &xp[(iy - xr.y0) * xr.width()..(iy - xr.y0 + 1) * xr.width()];
                        for kx in 0..KERNEL {
                            let (lo, hi) = valid_span(out.x0, out.x1, kx, w);
                            if lo >= hi {
                                continue;
                            }
                            let src = lo + kx - 1 - xr.x0;
                            gw[(ci * KERNEL + ky) * KERNEL + kx] +=
                                dot(&drow[lo - out.x0..hi - out.x0], &xrow[src..src + (hi - lo)]);
                        }
                    }
                }
            }
        });
        let dx = need_dx.then(|| {
            let mut dx = Tile::zeros(self.in_channels, xr);
            exec.for_each_chunk(&mut dx.data, xr.area(), |ci, gplane| {
                for co in 0..self.out_channels {
                    let taps = self.taps(co, ci);
                    let dp = dy.plane(co);
                    for oy in out.y0..out.y1 {
                        let drow = &dp[(oy - out.y0) * ow..(oy - out.y0 + 1) * ow];
                        for ky in 0..KERNEL {
                            let Some(iy) = (oy + ky).checked_sub(1).filter(|&iy| iy < h) else { continue };
                            let grow = &mut gplane[(iy - xr.y0) * xr.width()..(iy - xr.y0 + 1) * xr.width()];
                            for kx in 0..KERNEL {
                                let wv = taps[ky * KERNEL + kx];
                                if wv == 0.0 {
                                    continue;
                                }
                                let (lo, hi) = valid_span(out.x0, out.x1, kx, w);
                                if lo >= hi {
                                    continue;
                                }
                                let dst = lo + kx - 1 - xr.x0;
                                axpy(&mut grow[dst..dst + (hi - lo)], wv, &drow[lo - out.x0..hi - out.x0]);
                            }
                        }
                    }
                }
            });
            dx
        });
        Ok((dx, ConvGrad { weight, bias }))
    }
}

pub fn relu_forward(x: &Tile) -> Tile {
    Tile { channels: x.channels, rect: x.rect, data: x.data.iter().map(|&v| v.max(0.0)).collect() }
}

/// Gradient through a ReLU given its output `y`.
pub fn relu_backward(y: &Tile, dy: &Tile) -> Tile {
    let data = y.data.iter().zip(&dy.data).map(|(&y, &g)| if y > 0.0 { g } else { 0.0 }).collect();
    Tile { channels: dy.channels, rect: dy.rect, data }
}

/// Source taps of output coordinate `o` of a 2× bilinear upsample of an
/// axis of length `n` (half-pixel centers, edge clamped).
pub fn upsample_taps(o: usize, n: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f64)
}

/// Input window a 2× upsample reads to produce `out`.
pub fn upsample_source(out: Rect, dims: (usize, usize)) -> Rect {
    let (h, w) = dims;
    Rect {
        y0: upsample_taps(out.y0, h).0,
        x0: upsample_taps(out.x0, w).0,
        y1: upsample_taps(out.y1 - 1, h).1 + 1,
        x1: upsample_taps(out.x1 - 1, w).1 + 1,
    }
}

/// 2× bilinear upsample of an image of size `dims`, evaluated over `out`
/// (in output coordinates).
pub fn upsample_forward(x: &Tile, dims: (usize, usize), out: Rect, exec: &Executor) -> Result<Tile> {
    let src = upsample_source(out, dims);
    if !x.rect.contains(&src) || out.y1 > 2 * dims.0 || out.x1 > 2 * dims.1 {
        return Err(Error::shape("upsample input window does not cover the output window"));
    }
    let (h, w) = dims;
    let xr = x.rect;
    let xt: Vec<(usize, usize, f64)> = (out.x0..out.x1).map(|o| upsample_taps(o, w)).collect();
    let yt: Vec<(usize, usize, f64)> = (out.y0..out.y1).map(|o| upsample_taps(o, h)).collect();
    let mut y = Tile::zeros(x.channels, out);
    let ow = out.width();
    exec.for_each_chunk(&mut y.data, out.area(), |c, plane| {
        let xp = x.plane(c);
        let row = |iy: usize| -> Vec<f64> {
            let r = &xp[(iy - xr.y0) * xr.width()..(iy - xr.y0 + 1) * xr.width()];
            xt.iter()
                .map(|&(i0, i1, l)| {
                    let (a, b) = (r[i0 - xr.x0], r[i1 - xr.x0]);
                    a + l * (b - a)
                })
                .collect()
        };
        for (oy, &(i0, i1, l)) in yt.iter().enumerate() {
            let (a, b) = (row(i0), row(i1));
            for (v, (a, b)) in plane[oy * ow..(oy + 1) * ow].iter_mut().zip(a.iter().zip(&b)) {
                *v = a + l * (b - a);
            }
        }
    });
    Ok(y)
}

/// Gradient of [`upsample_forward`] with respect to its input over `src`.
pub fn upsample_backward(dy: &Tile, dims: (usize, usize), src: Rect, exec: &Executor) -> Result<Tile> {
    let out = dy.rect;
    if !src.contains(&upsample_source(out, dims)) {
        return Err(Error::shape("upsample gradient window does not cover the source"));
    }
    let (h, w) = dims;
    let xt: Vec<(usize, usize, f64)> = (out.x0..out.x1).map(|o| upsample_taps(o, w)).collect();
    let yt: Vec<(usize, usize, f64)> = (out.y0..out.y1).map(|o| upsample_taps(o, h)).collect();
    let mut dx = Tile::zeros(dy.channels, src);
    let (ow, sw) = (out.width(), src.width());
    exec.for_each_chunk(&mut dx.data, src.area(), |c, plane| {
        let dp = dy.plane(c);
        for (oy, &(i0, i1, l)) in yt.iter().enumerate() {
            for (ox, &(j0, j1, m)) in xt.iter().enumerate() {
                let g = dp[oy * ow + ox];
                if g == 0.0 {
                    continue;
                }
                let (r0, r1) = ((i0 - src.y0) * sw, (i1 - src.y0) * sw);
                let (c0, c1) = (j0 - src.x0, j1 - src.x0);
                let (gy0, gy1) = ((1.0 - l) * g, l * g);
                plane[r0 + c0] += (1.0 - m) * gy0;
                plane[r0 + c1] += m * gy0;
                plane[r1 + c0] += (1.0 - m) * gy1;
                plane[r1 + c1] += m * gy1;
            }
        }
    });
    Ok(dx)
}

/// Elementwise sum; the gradient passes unchanged to both operands.
pub fn skip_add(a: &Tile, b: &Tile) -> Result<Tile> {
    if a.channels != b.channels || a.rect != b.rect {
        return Err(Error::shape("skip connection operands differ in shape"));
    }
    let data = a.data.iter().zip(&b.data).map(|(a, b)| a + b).collect();
    Ok(Tile { channels: a.channels, rect: a.rect, data })
}

/// Softmax across channels at every pixel.
pub fn softmax(logits: &Tile) -> Tile {
    let (c, n) = (logits.channels, logits.plane_len());
    let mut out = Tile::zeros(c, logits.rect);
    for p in 0..n {
        let max = (0..c).map(|k| logits.data[k * n + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (logits.data[k * n + p] - max).exp();
            out.data[k * n + p] = e;
            sum += e;
        }
        for k in 0..c {
            out.data[k * n + p] /= sum;
        }
    }
    out
}

/// Floor inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Mean over unmasked pixels of `Σ -target · ln(probs + LOG_EPS)`; zero when
/// every pixel is masked.
pub fn cross_entropy(probs: &Tile, target: &Tile, valid: &[bool]) -> f64 {
    let (c, n) = (probs.channels, probs.plane_len());
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for p in (0..n).filter(|&p| valid[p]) {
        for k in 0..c {
            let t = target.data[k * n + p];
            if t != 0.0 {
                total -= t * (probs.data[k * n + p] + LOG_EPS).ln();
            }
        }
    }
    total / count as f64
}

/// Fused softmax + cross-entropy gradient with respect to the logits,
/// `scale · (probs - target) / count` on unmasked pixels. The `LOG_EPS`
/// floor is left out, so this is exact only while probabilities stay well
/// above it.
pub fn cross_entropy_grad(probs: &Tile, target: &Tile, valid: &[bool], scale: f64) -> Tile {
    let (c, n) = (probs.channels, probs.plane_len());
    let count = valid.iter().filter(|&&v| v).count().max(1) as f64;
    let mut g = Tile::zeros(c, probs.rect);
    for p in (0..n).filter(|&p| valid[p]) {
        for k in 0..c {
            g.data[k * n + p] = scale * (probs.data[k * n + p] - target.data[k * n + p]) / count;
        }
    }
    g
}
