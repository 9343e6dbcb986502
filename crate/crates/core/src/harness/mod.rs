//! Configuration, image metrics and the sampling benchmark.

pub mod bench;
pub mod config;
pub mod metrics;
pub mod pipeline;

pub use bench::{
    compare_samplers, csv_string, read_csv, render_method, run_bench, summarize, write_csv, BenchSpec, EstimatorStats,
    MetricRow, ProposalMode, ProposalSource, Summary, CSV_HEADER,
};
pub use config::{Config, KeyValues};
pub use metrics::{masked_psnr, pixel_errors, psnr, worst_percentile_psnr, PSNR_CAP};
pub use pipeline::{pixel_budgets, render_robust, BudgetRule, Method, RobustOptions};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::render::{BinGrid, Camera, RenderOutput};
use crate::scene::SceneOracle;

impl Config {
    pub fn scene_oracle(&self) -> Result<SceneOracle> {
        let scene = SceneOracle::named(&self.scene.name)?;
        match self.scene.beta {
            Some(b) => scene.with_beta(b),
            None => Ok(scene),
        }
    }

    pub fn camera(&self) -> Camera {
        Camera::default_view(self.scene.width, self.scene.height)
    }

    pub fn executor(&self) -> Executor {
        Executor::new(self.workers)
    }

    pub fn proposal_source(&self) -> ProposalSource {
        ProposalSource {
            mode: self.bench.proposal,
            config: self.proposal.net,
            checkpoint: self.proposal.checkpoint.clone(),
            blur_sigma: self.proposal.blur_sigma,
            suppress_eps: self.proposal.suppress_eps,
        }
    }

    pub fn bench_spec(&self) -> Result<BenchSpec> {
        Ok(BenchSpec {
            scene: self.scene_oracle()?,
            camera: self.camera(),
            methods: self.bench.methods.clone(),
            spp: self.bench.spp.clone(),
            trials: self.bench.trials,
            seed: self.seed,
            reference_samples: self.render.reference_samples,
            tau: self.sampling.tau,
            lift_probe: self.sampling.lift_probe,
            deterministic: self.deterministic,
            preview_dir: self.bench.previews.then(|| self.out_dir.join("previews")),
        })
    }
}

/// Renders `camera` with the configured method and sample budget. Robust
/// rendering follows `sampling.adaptive` and `sampling.lift_probe`.
pub fn render_configured(
    config: &Config,
    scene: &SceneOracle,
    camera: &Camera,
    proposal: Option<&BinGrid>,
    exec: &Executor,
) -> Result<RenderOutput> {
    let method = config.render.method;
    if method != Method::Robust {
        return render_method(
            method,
            scene,
            camera,
            proposal,
            None,
            config.render.spp,
            config.sampling.tau,
            config.seed,
            exec,
        );
    }
    let proposal = proposal.ok_or_else(|| Error::Config("robust rendering needs a proposal".into()))?;
    let budget = if config.sampling.adaptive {
        BudgetRule::Adaptive { budget: config.sampling.budget, top_k: config.sampling.top_k }
    } else {
        BudgetRule::Fixed(config.render.spp)
    };
    let probe =
        if config.sampling.lift_probe { Some(bench::lifting_probe(scene, camera, proposal.bins, exec)?) } else { None };
    render_robust(
        scene,
        camera,
        proposal,
        RobustOptions { tau: config.sampling.tau, budget },
        probe.as_ref(),
        config.seed,
        exec,
    )
}
