//! Per-pixel sample placement for each benchmarked method.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::render::{render_pixels, BinGrid, Camera, Probe, Ray, RayBins, RenderOutput, SamplePoint, SampleSet};
use crate::rng::{stream, stream_rng};
use crate::sampling::{
    adaptive_score, allocate_budgets, clipped_deltas, inverse_cdf_sample, nucleus_filter, stratified_budget_sample,
    stratified_variates, unstratified_variates, DiscretePdf, RobustPdf, SampleBudget,
};
use crate::scene::SceneOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Independent inverse-CDF samples from the proposal.
    Unstratified,
    /// Stratified inverse-CDF samples from the proposal.
    Stratified,
    /// Nucleus-filtered proposal, per-bin strata, clipped segment lengths.
    Robust,
    /// Coarse-to-fine sampling without a proposal, as used for the reference.
    UniformDense,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Unstratified, Method::Stratified, Method::Robust, Method::UniformDense];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Unstratified => "unstratified",
            Method::Stratified => "stratified",
            Method::Robust => "robust",
            Method::UniformDense => "uniform-dense",
        }
    }

    pub fn needs_proposal(&self) -> bool {
        !matches!(self, Method::UniformDense)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown sampling method `{s}`")))
    }
}

/// How many samples each pixel of a robust render receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetRule {
    Fixed(usize),
    /// Leftover-mass scores pick the pixels that get the boosted count.
    Adaptive {
        budget: SampleBudget,
        top_k: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustOptions {
    pub tau: f64,
    pub budget: BudgetRule,
}

/// Per-pixel sample counts under `rule` for a proposal grid.
pub fn pixel_budgets(proposal: &BinGrid, rule: BudgetRule) -> Vec<usize> {
    match rule {
        BudgetRule::Fixed(n) => vec![n; proposal.pixel_count()],
        BudgetRule::Adaptive { budget, top_k } => {
            let scores: Vec<f64> = (0..proposal.pixel_count())
                .map(|i| adaptive_score(&DiscretePdf::from_weights(&proposal.ray_vector(i)), top_k))
                .collect();
            allocate_budgets(&scores, &budget)
        }
    }
}

fn check_proposal(proposal: &BinGrid, camera: &Camera) -> Result<()> {
    if (proposal.width, proposal.height) != (camera.width, camera.height) {
        return Err(Error::shape(format!(
            "proposal is {}x{}, camera is {}x{}",
            proposal.width, proposal.height, camera.width, camera.height
        )));
    }
    Ok(())
}

/// Inverse-CDF sampling of the proposal with `spp` samples per pixel and
/// standard segment lengths.
pub fn render_proposal_samples(
    scene: &SceneOracle,
    camera: &Camera,
    proposal: &BinGrid,
    spp: usize,
    stratified: bool,
    seed: u64,
    exec: &Executor,
) -> Result<RenderOutput> {
    check_proposal(proposal, camera)?;
    render_pixels(scene, camera, exec, |i, ray| {
        let bins = RayBins::new(*ray, proposal.bins)?;
        let pdf = DiscretePdf::from_weights(&proposal.ray_vector(i));
        let mut rng = stream_rng(seed, stream::PROPOSAL_SAMPLES, i as u64);
        let u = if stratified { stratified_variates(spp, &mut rng) } else { unstratified_variates(spp, &mut rng) };
        Ok(SampleSet::from_positions(&inverse_cdf_sample(&pdf, &bins, &u), ray.t_far))
    })
}

/// Robust sample set of one ray: nucleus filter, per-bin strata, clipped δ.
pub fn robust_samples<R: rand::Rng + ?Sized>(
    pdf: &DiscretePdf,
    bins: &RayBins,
    tau: f64,
    spp: usize,
    rng: &mut R,
) -> Result<(RobustPdf, SampleSet)> {
    let pdf = if pdf.is_zero() { DiscretePdf::uniform(bins.count()) } else { pdf.clone() };
    let q = nucleus_filter(&pdf, tau)?;
    let s = stratified_budget_sample(&q, &pdf, spp, bins, rng);
    Ok((q, SampleSet::with_deltas(&s.ts, &s.deltas)?))
}

/// Probe samples of the parent low-resolution ray, one per support bin,
/// placed at the bin midpoints of the high-resolution ray.
pub fn lift_probe_samples(
    probe: &Probe,
    x: usize,
    y: usize,
    scale: usize,
    support: &[usize],
    bins: &RayBins,
) -> Vec<SamplePoint> {
    let Some(samples) = &probe.samples else { return Vec::new() };
    let (px, py) = ((x / scale).min(probe.camera.width - 1), (y / scale).min(probe.camera.height - 1));
    let z = probe.weights.bins;
    let base = (py * probe.camera.width + px) * z;
    support
        .iter()
        .filter(|&&k| k < z)
        .map(|&k| SamplePoint { t: bins.midpoint(k), delta: 0.0, reuse: Some(samples[base + k]) })
        .collect()
}

/// Merges two sample sets and recomputes clipped segment lengths.
pub fn merge_samples(a: &SampleSet, b: &[SamplePoint], ray: &Ray, max_delta: f64) -> SampleSet {
    let mut points: Vec<SamplePoint> = a.points.iter().chain(b).copied().collect();
    points.sort_by(|p, q| p.t.total_cmp(&q.t));
    let ts: Vec<f64> = points.iter().map(|p| p.t).collect();
    for (p, d) in points.iter_mut().zip(clipped_deltas(&ts, ray.t_far, max_delta)) {
        p.delta = d;
    }
    SampleSet { points }
}

/// Robust rendering from a proposal grid. With a probe (rendered with kept
/// samples), the parent probe samples of each pixel's support are merged in.
pub fn render_robust(
    scene: &SceneOracle,
    camera: &Camera,
    proposal: &BinGrid,
    options: RobustOptions,
    probe: Option<&Probe>,
    seed: u64,
    exec: &Executor,
) -> Result<RenderOutput> {
    check_proposal(proposal, camera)?;
    let budgets = pixel_budgets(proposal, options.budget);
    let scale = probe.map(|p| camera.width / p.camera.width.max(1)).unwrap_or(1).max(1);
    render_pixels(scene, camera, exec, |i, ray| {
        let bins = RayBins::new(*ray, proposal.bins)?;
        let pdf = DiscretePdf::from_weights(&proposal.ray_vector(i));
        let mut rng = stream_rng(seed, stream::PROPOSAL_SAMPLES, i as u64);
        let (q, set) = robust_samples(&pdf, &bins, options.tau, budgets[i], &mut rng)?;
        match probe {
            Some(p) => {
                let lifted = lift_probe_samples(p, i % camera.width, i / camera.width, scale, q.support(), &bins);
                Ok(merge_samples(&set, &lifted, ray, bins.width()))
            }
            None => Ok(set),
        }
    })
}

/// Two-pass coarse/fine rendering with `spp` samples per pixel.
pub fn render_uniform_dense(
    scene: &SceneOracle,
    camera: &Camera,
    spp: usize,
    seed: u64,
    exec: &Executor,
) -> Result<RenderOutput> {
    crate::render::render_two_pass(scene, camera, spp, seed, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposal::oracle_proposal;
    use crate::render::{render_probe, render_reference, GridKind, ProbeJitter};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("best".parse::<Method>().is_err());
    }

    #[test]
    fn uniform_dense_matches_reference_estimator() {
        let scene = SceneOracle::named("sphere").unwrap();
        let cam = Camera::default_view(6, 6);
        let exec = Executor::sequential();
        let a = render_uniform_dense(&scene, &cam, 384, 5, &exec).unwrap();
        let b = render_reference(&scene, &cam, 384, 5, &exec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptive_budgets_average_to_mean_spp() {
        let grid = BinGrid { bins: 20, height: 5, width: 4, kind: GridKind::Full, data: vec![0.05; 400] };
        let spp = pixel_budgets(&grid, BudgetRule::Adaptive { budget: SampleBudget::default(), top_k: 16 });
        assert_eq!(spp.iter().filter(|&&n| n == 32).count(), 2);
        assert_eq!(pixel_budgets(&grid, BudgetRule::Fixed(3)), vec![3; 20]);
    }

    #[test]
    fn robust_render_respects_budgets() {
        let scene = SceneOracle::named("two-spheres").unwrap();
        let cam = Camera::default_view(8, 8);
        let exec = Executor::sequential();
        let prop = oracle_proposal(&scene, &cam, 48, 1.0, 5e-3, &exec).unwrap();
        let opts = RobustOptions { tau: 0.98, budget: BudgetRule::Fixed(4) };
        let out = render_robust(&scene, &cam, &prop, opts, None, 1, &exec).unwrap();
        assert_eq!(out.radiance.width, 8);
        let wrong = Camera::default_view(4, 4);
        assert!(render_robust(&scene, &wrong, &prop, opts, None, 1, &exec).is_err());
    }

    #[test]
    fn lifted_probe_samples_join_the_integral() {
        let scene = SceneOracle::named("sphere").unwrap();
        let cam = Camera::default_view(8, 8);
        let exec = Executor::sequential();
        let probe = render_probe(&scene, &cam.with_resolution(2, 2), 48, ProbeJitter::Midpoints, true, &exec).unwrap();
        let prop = oracle_proposal(&scene, &cam, 48, 1.0, 5e-3, &exec).unwrap();
        let ray = cam.ray(4, 4).unwrap();
        let bins = RayBins::new(ray, 48).unwrap();
        let support = [10, 11];
        let lifted = lift_probe_samples(&probe, 4, 4, 4, &support, &bins);
        assert_eq!(lifted.len(), 2);
        let parent = probe.samples.as_ref().unwrap()[(2 + 1) * 48 + 10];
        assert_eq!(lifted[0].reuse, Some(parent));
        assert_eq!(lifted[0].t, bins.midpoint(10));
        let set = SampleSet::from_positions(&[bins.midpoint(10) + 0.001], ray.t_far);
        let merged = merge_samples(&set, &lifted, &ray, bins.width());
        assert_eq!(merged.len(), 3);
        assert!(merged.points.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(merged.points.iter().all(|p| p.delta <= bins.width()));
        let opts = RobustOptions { tau: 0.98, budget: BudgetRule::Fixed(4) };
        let with = render_robust(&scene, &cam, &prop, opts, Some(&probe), 1, &exec).unwrap();
        let without = render_robust(&scene, &cam, &prop, opts, None, 1, &exec).unwrap();
        assert_ne!(with.radiance, without.radiance);
    }
}
