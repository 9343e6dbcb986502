use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use volsampler_core::harness::{
    compare_samplers, masked_psnr, psnr, render_configured, run_bench, summarize, worst_percentile_psnr, write_csv,
    Config, KeyValues, Method, ProposalMode, ProposalSource,
};
use volsampler_core::proposal::{checkpoint, loss_curve, loss_reduction, ProposalNet, Trainer};
use volsampler_core::render::{render_reference, write_file, BinGrid, Camera, RenderOutput};
use volsampler_core::rng::{stream, stream_rng};
use volsampler_core::scene::{SceneOracle, SCENE_NAMES};
use volsampler_core::{Error, Executor};

const THREADS_ENV: &str = "VOLSAMPLER_THREADS";

#[derive(Parser, Debug)]
#[command(name = "volsampler", version, about = "Low-sample volume rendering: render, benchmark and train samplers")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Configuration file (`key = value` lines, `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); VOLSAMPLER_THREADS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Report zero wall times so outputs depend only on the seed.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Use cleaned dense bin weights instead of a trained checkpoint.
    #[arg(long, global = true)]
    oracle_proposal: bool,
    /// Override a config key, e.g. `--set bench.spp=4,8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the configured scene with `render.method` at `render.spp`.
    Render {
        /// Render the reference instead.
        #[arg(long)]
        reference: bool,
        /// Also render the reference and print PSNR against it.
        #[arg(long)]
        score: bool,
    },
    /// Score every configured method and sample count against the reference.
    Bench,
    /// Train the proposal network and write the checkpoint.
    TrainProposal,
    /// Variance of repeated single-pixel estimates for each method.
    CompareSamplers {
        /// Pixel as `x,y`; defaults to the image center.
        #[arg(long, value_parser = parse_pixel)]
        pixel: Option<(usize, usize)>,
        #[arg(long, default_value_t = 8)]
        spp: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Print the effective configuration, scenes and build features.
    Info,
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or("expected `x,y`")?;
    Ok((x.trim().parse().map_err(|e| format!("{e}"))?, y.trim().parse().map_err(|e| format!("{e}"))?))
}

fn load_config(g: &GlobalArgs) -> Result<Config> {
    let mut kv = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::default(),
    };
    for o in &g.overrides {
        kv.set(o)?;
    }
    if let Some(seed) = g.seed {
        kv.set(&format!("seed={seed}"))?;
    }
    if let Some(w) = g.workers {
        kv.set(&format!("workers={w}"))?;
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let w: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be an unsigned integer, got `{v}`")))?;
        kv.set(&format!("workers={w}"))?;
    }
    if let Some(dir) = &g.out_dir {
        kv.set(&format!("out_dir={}", dir.display()))?;
    }
    if g.deterministic {
        kv.set("deterministic=true")?;
    }
    if g.oracle_proposal {
        kv.set("bench.proposal=oracle")?;
    }
    Ok(Config::from_key_values(&kv)?)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_outputs(dir: &Path, stem: &str, out: &RenderOutput) -> Result<()> {
    write_file(&dir.join(format!("{stem}.pfm")), |w| out.radiance.write_pfm(w))?;
    write_file(&dir.join(format!("{stem}.ppm")), |w| out.radiance.write_ppm(w))?;
    write_file(&dir.join(format!("{stem}_beta.pfm")), |w| out.beta_image.write_pfm(w))?;
    write_file(&dir.join(format!("{stem}_depth.pfm")), |w| out.expected_depth.write_pfm(w))?;
    write_file(&dir.join(format!("{stem}_opacity.pfm")), |w| out.accumulated_opacity.write_pfm(w))?;
    Ok(())
}

fn proposal_for(
    source: &ProposalSource,
    needed: bool,
    scene: &SceneOracle,
    camera: &Camera,
    exec: &Executor,
) -> Result<Option<BinGrid>> {
    if !needed {
        return Ok(None);
    }
    Ok(Some(source.proposal(scene, camera, exec)?))
}

fn cmd_render(cfg: &Config, exec: &Executor, reference: bool, score: bool) -> Result<()> {
    let scene = cfg.scene_oracle()?;
    let camera = cfg.camera();
    create_out_dir(&cfg.out_dir)?;
    let start = Instant::now();
    if reference {
        let out = render_reference(&scene, &camera, cfg.render.reference_samples, cfg.seed, exec)?;
        write_outputs(&cfg.out_dir, "reference", &out)?;
        println!("reference: {} samples/pixel in {:.2?}", cfg.render.reference_samples, start.elapsed());
        return Ok(());
    }
    let method = cfg.render.method;
    let proposal = proposal_for(&cfg.proposal_source(), method.needs_proposal(), &scene, &camera, exec)?;
    let out = render_configured(cfg, &scene, &camera, proposal.as_ref(), exec)?;
    let stem = format!("render_{method}");
    write_outputs(&cfg.out_dir, &stem, &out)?;
    println!(
        "{method}: {}x{} in {:.2?} -> {}",
        camera.width,
        camera.height,
        start.elapsed(),
        cfg.out_dir.join(stem).display()
    );
    if score {
        let reference = render_reference(&scene, &camera, cfg.render.reference_samples, cfg.seed, exec)?;
        let fg: Vec<bool> = reference.accumulated_opacity.data.iter().map(|&a| a > 0.5).collect();
        println!(
            "psnr {:.3} dB  worst1% {:.3} dB  foreground {:.3} dB",
            psnr(&out.radiance, &reference.radiance)?,
            worst_percentile_psnr(&out.radiance, &reference.radiance, 1.0)?,
            masked_psnr(&out.radiance, &reference.radiance, &fg)?
        );
    }
    Ok(())
}

fn cmd_bench(cfg: &Config, exec: &Executor) -> Result<()> {
    let spec = cfg.bench_spec()?;
    create_out_dir(&cfg.out_dir)?;
    let needed = spec.methods.iter().any(Method::needs_proposal);
    let proposal = proposal_for(&cfg.proposal_source(), needed, &spec.scene, &spec.camera, exec)?;
    let rows = run_bench(&spec, proposal.as_ref(), exec)?;
    let path = cfg.out_dir.join("bench.csv");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(&rows, BufWriter::new(file))?;
    println!(
        "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "method", "spp", "psnr", "worst10", "worst1", "worst0.1", "ms"
    );
    for s in summarize(&rows) {
        println!(
            "{:<14} {:>5} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.1}",
            s.method, s.spp, s.psnr, s.worst10, s.worst1, s.worst01, s.ms
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(cfg: &Config, exec: &Executor) -> Result<()> {
    let scene = cfg.scene_oracle()?;
    let net = ProposalNet::init(cfg.proposal.net, &mut stream_rng(cfg.seed, stream::INIT, 0))?;
    let mut trainer = Trainer::new(net, cfg.train)?;
    create_out_dir(&cfg.out_dir)?;
    let start = Instant::now();
    let steps = cfg.train.steps;
    let reports = trainer.train(&scene, cfg.seed, exec, |step, r| {
        if step % 25 == 0 || step + 1 == steps {
            println!("step {step:>5}  loss {:.4}  labelled {:>5}  {:.1?}", r.loss, r.labelled, start.elapsed());
        }
    })?;
    if let Some(dir) = cfg.proposal.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_out_dir(dir)?;
    }
    checkpoint::save(&trainer.net, &cfg.proposal.checkpoint)?;
    let path = cfg.out_dir.join("train_loss.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "step,loss,labelled")?;
    for (i, r) in reports.iter().enumerate() {
        writeln!(w, "{i},{},{}", r.loss, r.labelled)?;
    }
    w.flush()?;
    let curve = loss_curve(&reports);
    let window = (curve.len() / 10).max(1);
    println!(
        "trained {} steps ({} with labelled pixels) in {:.1?}; windowed loss reduction {:.1}% (window {window})",
        reports.len(),
        curve.len(),
        start.elapsed(),
        100.0 * loss_reduction(&curve, window)
    );
    println!("wrote {} and {}", cfg.proposal.checkpoint.display(), path.display());
    Ok(())
}

fn cmd_compare(cfg: &Config, exec: &Executor, pixel: Option<(usize, usize)>, spp: usize, trials: usize) -> Result<()> {
    if spp == 0 || trials < 2 {
        return Err(Error::Config("compare-samplers needs spp ≥ 1 and at least 2 trials".into()).into());
    }
    let scene = cfg.scene_oracle()?;
    let camera = cfg.camera();
    let (x, y) = pixel.unwrap_or((camera.width / 2, camera.height / 2));
    if x >= camera.width || y >= camera.height {
        return Err(Error::Config(format!(
            "pixel ({x}, {y}) lies outside the {}x{} image",
            camera.width, camera.height
        ))
        .into());
    }
    let grid = cfg.proposal_source().proposal(&scene, &camera, exec)?;
    let proposal = grid.ray_vector(y * camera.width + x);
    let methods = [Method::Unstratified, Method::Stratified, Method::Robust, Method::UniformDense];
    let stats =
        compare_samplers(&scene, &camera, (x, y), &proposal, &methods, spp, trials, cfg.sampling.tau, cfg.seed, exec)?;
    create_out_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("compare_samplers.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "method,spp,trials,mean,variance")?;
    println!("pixel ({x}, {y}), {spp} samples, {trials} trials");
    for s in &stats {
        writeln!(w, "{},{spp},{trials},{},{}", s.method, s.mean, s.variance)?;
        println!("{:<14} mean {:.6}  variance {:.3e}", s.method.to_string(), s.mean, s.variance);
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_info(cfg: &Config, exec: &Executor) -> Result<()> {
    println!("volsampler {}", env!("CARGO_PKG_VERSION"));
    println!("parallel feature: {}", cfg!(feature = "parallel"));
    println!("workers: {}", exec.workers());
    println!("scenes: {}", SCENE_NAMES.join(", "));
    println!(
        "proposal network: {} convolutions, {} parameters",
        cfg.proposal.net.conv_count(),
        ProposalNet::zeros(cfg.proposal.net)?.parameter_count()
    );
    if cfg.bench.proposal == ProposalMode::Checkpoint {
        let found = if cfg.proposal.checkpoint.exists() { "found" } else { "missing" };
        println!("checkpoint: {} ({found})", cfg.proposal.checkpoint.display());
    }
    println!();
    print!("{}", cfg.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let exec = cfg.executor();
    match cli.command {
        Command::Render { reference, score } => cmd_render(&cfg, &exec, reference, score),
        Command::Bench => cmd_bench(&cfg, &exec),
        Command::TrainProposal => cmd_train(&cfg, &exec),
        Command::CompareSamplers { pixel, spp, trials } => cmd_compare(&cfg, &exec, pixel, spp, trials),
        Command::Info => cmd_info(&cfg, &exec),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::Config(_) => 2,
            Error::MissingCheckpoint { .. } => 3,
            Error::Io(_) | Error::Csv(_) => 4,
            _ => 1,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 4;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
