//! Sampling-method benchmark: PSNR and worst-percentile PSNR against the
//! reference render, per method, sample count and trial.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{pixel_errors, psnr, worst_percentile_of};
use super::pipeline::{
    render_proposal_samples, render_robust, render_uniform_dense, robust_samples, BudgetRule, Method, RobustOptions,
};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::proposal::{checkpoint, oracle_proposal, predict, ProposalConfig, SCALE};
use crate::render::{
    integrate_samples, render_probe, render_reference, two_pass_samples, write_file, BinGrid, Camera, Image, Probe,
    ProbeJitter, RayBins, RenderOutput, SampleSet,
};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::sampling::{inverse_cdf_sample, stratified_variates, unstratified_variates, DiscretePdf};
use crate::scene::SceneOracle;

/// Where the proposal distributions of a benchmark come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalMode {
    /// A trained network loaded from the configured checkpoint.
    Checkpoint,
    /// Blurred, suppressed dense bin weights of the scene itself.
    Oracle,
}

impl FromStr for ProposalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkpoint" => Ok(ProposalMode::Checkpoint),
            "oracle" => Ok(ProposalMode::Oracle),
            _ => Err(Error::config(format!("unknown proposal mode `{s}` (expected checkpoint or oracle)"))),
        }
    }
}

impl std::fmt::Display for ProposalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProposalMode::Checkpoint => "checkpoint",
            ProposalMode::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSource {
    pub mode: ProposalMode,
    pub config: ProposalConfig,
    pub checkpoint: PathBuf,
    pub blur_sigma: f64,
    pub suppress_eps: f64,
}

impl ProposalSource {
    pub fn bins(&self) -> usize {
        self.config.bins
    }

    /// Proposal grid at the camera's resolution.
    pub fn proposal(&self, scene: &SceneOracle, camera: &Camera, exec: &Executor) -> Result<BinGrid> {
        match self.mode {
            ProposalMode::Oracle => {
                oracle_proposal(scene, camera, self.config.bins, self.blur_sigma, self.suppress_eps, exec)
            }
            ProposalMode::Checkpoint => {
                let net = checkpoint::load(&self.checkpoint, self.config)?;
                predict(&net, scene, camera, exec)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub scene: SceneOracle,
    pub camera: Camera,
    pub methods: Vec<Method>,
    pub spp: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub reference_samples: usize,
    pub tau: f64,
    /// Merge parent probe samples into robust renders.
    pub lift_probe: bool,
    /// Report zero wall time so the CSV depends only on the seed.
    pub deterministic: bool,
    /// Trial-0 previews and the reference are written here when set.
    pub preview_dir: Option<PathBuf>,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spp.is_empty() || self.spp.contains(&0) {
            return Err(Error::config("bench sample counts must be positive"));
        }
        if self.trials == 0 {
            return Err(Error::config("bench needs at least one trial"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("bench needs at least one method"));
        }
        if self.reference_samples == 0 {
            return Err(Error::config("reference sample count must be positive"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub spp: usize,
    pub trial: usize,
    pub psnr: f64,
    pub worst10: f64,
    pub worst1: f64,
    pub worst01: f64,
    pub ms: u64,
}

pub const CSV_HEADER: &str = "method,spp,trial,psnr,worst10,worst1,worst01,ms";

impl MetricRow {
    pub fn score(method: Method, spp: usize, trial: usize, image: &Image, reference: &Image, ms: u64) -> Result<Self> {
        let e = pixel_errors(image, reference)?;
        Ok(MetricRow {
            method: method.name().to_string(),
            spp,
            trial,
            psnr: psnr(image, reference)?,
            worst10: worst_percentile_of(&e, 10.0),
            worst1: worst_percentile_of(&e, 1.0),
            worst01: worst_percentile_of(&e, 0.1),
            ms,
        })
    }
}

pub fn write_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header `{}`", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn csv_string(rows: &[MetricRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Domain(e.to_string()))
}

/// Mean metrics over trials for one (method, spp) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub spp: usize,
    pub trials: usize,
    pub psnr: f64,
    pub worst10: f64,
    pub worst1: f64,
    pub worst01: f64,
    pub ms: f64,
}

/// Groups rows by (method, spp) in first-appearance order.
pub fn summarize(rows: &[MetricRow]) -> Vec<Summary> {
    let mut out: Vec<Summary> = Vec::new();
    for r in rows {
        let s = match out.iter_mut().find(|s| s.method == r.method && s.spp == r.spp) {
            Some(s) => s,
            None => {
                out.push(Summary {
                    method: r.method.clone(),
                    spp: r.spp,
                    trials: 0,
                    psnr: 0.0,
                    worst10: 0.0,
                    worst1: 0.0,
                    worst01: 0.0,
                    ms: 0.0,
                });
                out.last_mut().unwrap()
            }
        };
        s.trials += 1;
        s.psnr += r.psnr;
        s.worst10 += r.worst10;
        s.worst1 += r.worst1;
        s.worst01 += r.worst01;
        s.ms += r.ms as f64;
    }
    for s in &mut out {
        let n = s.trials as f64;
        s.psnr /= n;
        s.worst10 /= n;
        s.worst1 /= n;
        s.worst01 /= n;
        s.ms /= n;
    }
    out
}

/// Seed of one trial. Trial 0 shares the reference seed; later trials are
/// hashed so runs with nearby seeds never share renders.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    match trial {
        0 => seed,
        t => derive_seed(seed, stream::BENCH_TRIAL, t as u64),
    }
}

/// Probe with kept field values for lifting samples into `camera`'s renders.
pub fn lifting_probe(scene: &SceneOracle, camera: &Camera, bins: usize, exec: &Executor) -> Result<Probe> {
    let low = camera.with_resolution((camera.width / SCALE).max(1), (camera.height / SCALE).max(1));
    render_probe(scene, &low, bins, ProbeJitter::Midpoints, true, exec)
}

/// One render of `method` at `spp` samples per pixel.
#[allow(clippy::too_many_arguments)]
pub fn render_method(
    method: Method,
    scene: &SceneOracle,
    camera: &Camera,
    proposal: Option<&BinGrid>,
    probe: Option<&Probe>,
    spp: usize,
    tau: f64,
    seed: u64,
    exec: &Executor,
) -> Result<RenderOutput> {
    let need = || proposal.ok_or_else(|| Error::config(format!("method `{method}` needs a proposal")));
    match method {
        Method::Unstratified => render_proposal_samples(scene, camera, need()?, spp, false, seed, exec),
        Method::Stratified => render_proposal_samples(scene, camera, need()?, spp, true, seed, exec),
        Method::Robust => {
            let opts = RobustOptions { tau, budget: BudgetRule::Fixed(spp) };
            render_robust(scene, camera, need()?, opts, probe, seed, exec)
        }
        Method::UniformDense => render_uniform_dense(scene, camera, spp, seed, exec),
    }
}

fn write_preview(dir: &Path, name: &str, out: &RenderOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_file(&dir.join(format!("{name}.ppm")), |w| out.radiance.write_ppm(w))?;
    write_file(&dir.join(format!("{name}.pfm")), |w| out.radiance.write_pfm(w))
}

/// Renders the reference once, then every (method, spp, trial) combination,
/// scoring each against the reference. Rows are ordered method, spp, trial.
pub fn run_bench(spec: &BenchSpec, proposal: Option<&BinGrid>, exec: &Executor) -> Result<Vec<MetricRow>> {
    spec.validate()?;
    if let Some(p) = proposal {
        if (p.width, p.height) != (spec.camera.width, spec.camera.height) {
            return Err(Error::shape("proposal resolution does not match the bench camera"));
        }
    }
    let reference = render_reference(&spec.scene, &spec.camera, spec.reference_samples, spec.seed, exec)?;
    if let Some(dir) = &spec.preview_dir {
        write_preview(dir, "reference", &reference)?;
    }
    let probe = match (spec.lift_probe, proposal) {
        (true, Some(p)) => Some(lifting_probe(&spec.scene, &spec.camera, p.bins, exec)?),
        _ => None,
    };
    let mut rows = Vec::new();
    for &method in &spec.methods {
        for &spp in &spec.spp {
            for trial in 0..spec.trials {
                let start = Instant::now();
                let seed = trial_seed(spec.seed, trial);
                let out = render_method(
                    method,
                    &spec.scene,
                    &spec.camera,
                    proposal,
                    probe.as_ref(),
                    spp,
                    spec.tau,
                    seed,
                    exec,
                )?;
                let ms = if spec.deterministic { 0 } else { start.elapsed().as_millis() as u64 };
                rows.push(MetricRow::score(method, spp, trial, &out.radiance, &reference.radiance, ms)?);
                if trial == 0 {
                    if let Some(dir) = &spec.preview_dir {
                        write_preview(dir, &format!("{method}_{spp}"), &out)?;
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Mean and variance of repeated single-pixel radiance estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStats {
    pub method: Method,
    /// Channel mean of each trial's estimate.
    pub estimates: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

impl EstimatorStats {
    fn new(method: Method, estimates: Vec<f64>) -> Self {
        let n = estimates.len().max(1) as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let variance = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        EstimatorStats { method, estimates, mean, variance }
    }
}

/// Repeats the estimate of pixel `(x, y)` with `spp` samples `trials` times
/// per method, each trial with its own random stream.
#[allow(clippy::too_many_arguments)]
pub fn compare_samplers(
    scene: &SceneOracle,
    camera: &Camera,
    (x, y): (usize, usize),
    proposal: &[f64],
    methods: &[Method],
    spp: usize,
    trials: usize,
    tau: f64,
    seed: u64,
    exec: &Executor,
) -> Result<Vec<EstimatorStats>> {
    let ray = camera.ray(x, y).ok_or_else(|| Error::Domain(format!("pixel ({x}, {y}) misses the scene box")))?;
    let bins = RayBins::new(ray, proposal.len())?;
    let pdf = DiscretePdf::from_weights(proposal);
    methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let estimates = exec.map(trials, |t| -> Result<f64> {
                let mut rng =
                    stream_rng(derive_seed(seed, stream::BENCH_TRIAL, mi as u64), stream::BENCH_TRIAL, t as u64);
                let set = match method {
                    Method::Unstratified => SampleSet::from_positions(
                        &inverse_cdf_sample(&pdf, &bins, &unstratified_variates(spp, &mut rng)),
                        ray.t_far,
                    ),
                    Method::Stratified => SampleSet::from_positions(
                        &inverse_cdf_sample(&pdf, &bins, &stratified_variates(spp, &mut rng)),
                        ray.t_far,
                    ),
                    Method::Robust => robust_samples(&pdf, &bins, tau, spp, &mut rng)?.1,
                    Method::UniformDense => two_pass_samples(scene, &ray, spp, &mut rng)?,
                };
                let r = integrate_samples(scene, &ray, &set)?.radiance;
                Ok((r[0] + r[1] + r[2]) / 3.0)
            });
            Ok(EstimatorStats::new(method, estimates.into_iter().collect::<Result<Vec<_>>>()?))
        })
        .collect()
}
