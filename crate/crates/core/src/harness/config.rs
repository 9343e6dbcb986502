//! Flat `key = value` configuration files.
//!
//! ```text
//! # comment
//! seed = 7
//! [bench]
//! spp = 2, 4, 8      # same as `bench.spp = 2, 4, 8` at top level
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::bench::ProposalMode;
use super::pipeline::Method;
use crate::error::{Error, Result};
use crate::losses::RegularizerConfig;
use crate::proposal::{ProposalConfig, TrainConfig, DEFAULT_BLUR_SIGMA, DEFAULT_SUPPRESS_EPS, SCALE};
use crate::render::{DEFAULT_BINS, REFERENCE_SAMPLES};
use crate::sampling::SampleBudget;

/// Raw `section.key -> (value, line)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {line_no}: unterminated section header")))?
                    .trim();
                if name.is_empty() || !name.chars().all(is_key_char) {
                    return Err(Error::config(format!("line {line_no}: invalid section name `{name}`")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::config(format!("line {line_no}: expected `key = value`")))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(is_key_char) {
                return Err(Error::config(format!("line {line_no}: invalid key `{key}`")));
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            kv.insert(&full, unquote(value.trim()), line_no)?;
        }
        Ok(kv)
    }

    fn insert(&mut self, key: &str, value: String, line: usize) -> Result<()> {
        if let Some((_, first)) = self.entries.get(key) {
            return Err(Error::config(format!("line {line}: `{key}` already set on line {first}")));
        }
        self.entries.insert(key.to_string(), (value, line));
        Ok(())
    }

    /// Applies a `key=value` override, replacing any existing value.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not `key=value`")))?;
        self.entries.insert(k.trim().to_string(), (unquote(v.trim()), 0));
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn where_(&self, key: &str) -> String {
        match self.entries.get(key) {
            Some((_, 0)) | None => format!("`{key}`"),
            Some((_, line)) => format!("line {line}: `{key}`"),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("{} expects {what}, got `{v}`", self.where_(key)))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::config(format!("{} expects {what}, got `{s}`", self.where_(key)))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some("true" | "yes" | "on" | "1") => Ok(Some(true)),
            Some("false" | "no" | "off" | "0") => Ok(Some(false)),
            Some(v) => Err(Error::config(format!("{} expects true or false, got `{v}`", self.where_(key)))),
        }
    }
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.'
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> String {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v).to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub name: String,
    /// Overrides the scene's base β when set.
    pub beta: Option<f64>,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub bins: usize,
    pub reference_samples: usize,
    /// Method and sample count of the `render` subcommand.
    pub method: Method,
    pub spp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub tau: f64,
    pub top_k: usize,
    pub budget: SampleBudget,
    /// Robust rendering uses the adaptive budget rule instead of a fixed spp.
    pub adaptive: bool,
    /// Merge the parent probe samples of each support bin into robust renders.
    pub lift_probe: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { tau: 0.98, top_k: 16, budget: SampleBudget::default(), adaptive: false, lift_probe: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub spp: Vec<usize>,
    pub trials: usize,
    pub proposal: ProposalMode,
    pub previews: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSettings {
    pub net: ProposalConfig,
    pub checkpoint: PathBuf,
    pub blur_sigma: f64,
    pub suppress_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// 0 = one worker per core.
    pub workers: usize,
    pub deterministic: bool,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub render: RenderConfig,
    pub sampling: SamplingConfig,
    pub bench: BenchConfig,
    pub proposal: ProposalSettings,
    pub train: TrainConfig,
    pub losses: RegularizerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            workers: 0,
            deterministic: false,
            out_dir: PathBuf::from("out"),
            scene: SceneConfig { name: "two-spheres".into(), beta: None, width: 128, height: 128 },
            render: RenderConfig {
                bins: DEFAULT_BINS,
                reference_samples: REFERENCE_SAMPLES,
                method: Method::Robust,
                spp: 16,
            },
            sampling: SamplingConfig::default(),
            bench: BenchConfig {
                methods: vec![Method::Unstratified, Method::Stratified, Method::Robust, Method::UniformDense],
                spp: vec![2, 4, 8, 16, 32, 64],
                trials: 3,
                proposal: ProposalMode::Checkpoint,
                previews: true,
            },
            proposal: ProposalSettings {
                net: ProposalConfig::default(),
                checkpoint: PathBuf::from("proposal.vsmp"),
                blur_sigma: DEFAULT_BLUR_SIGMA,
                suppress_eps: DEFAULT_SUPPRESS_EPS,
            },
            train: TrainConfig::default(),
            losses: RegularizerConfig::default(),
        }
    }
}

/// Every key [`Config::from_key_values`] understands.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "workers",
    "deterministic",
    "out_dir",
    "scene.name",
    "scene.beta",
    "scene.width",
    "scene.height",
    "render.bins",
    "render.reference_samples",
    "render.method",
    "render.spp",
    "sampling.tau",
    "sampling.top_k",
    "sampling.base_spp",
    "sampling.boosted_spp",
    "sampling.boosted_fraction",
    "sampling.adaptive",
    "sampling.lift_probe",
    "bench.methods",
    "bench.spp",
    "bench.trials",
    "bench.proposal",
    "bench.previews",
    "proposal.checkpoint",
    "proposal.hidden",
    "proposal.low_convs",
    "proposal.mid_convs",
    "proposal.high_convs",
    "proposal.head_convs",
    "proposal.blur_sigma",
    "proposal.suppress_eps",
    "train.steps",
    "train.resolution",
    "train.patch",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.max_elevation",
    "train.patch_draws",
    "losses.b_target_start",
    "losses.b_target_end",
    "losses.anneal_steps",
    "losses.lambda_sampler",
    "losses.lambda_surface",
    "losses.lambda_dec",
];

macro_rules! take {
    ($kv:expr, $key:literal, $slot:expr, $what:literal) => {
        if let Some(v) = $kv.parsed($key, $what)? {
            $slot = v;
        }
    };
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Config::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::config(format!("{}: unknown key", kv.where_(k))));
        }
        let mut c = Config::default();
        take!(kv, "seed", c.seed, "an unsigned integer");
        take!(kv, "workers", c.workers, "an unsigned integer");
        if let Some(v) = kv.boolean("deterministic")? {
            c.deterministic = v;
        }
        if let Some(v) = kv.get("out_dir") {
            c.out_dir = PathBuf::from(v);
        }
        if let Some(v) = kv.get("scene.name") {
            c.scene.name = v.to_string();
        }
        if let Some(v) = kv.parsed("scene.beta", "a number")? {
            c.scene.beta = Some(v);
        }
        take!(kv, "scene.width", c.scene.width, "an unsigned integer");
        take!(kv, "scene.height", c.scene.height, "an unsigned integer");
        take!(kv, "render.bins", c.render.bins, "an unsigned integer");
        take!(kv, "render.reference_samples", c.render.reference_samples, "an unsigned integer");
        take!(kv, "render.method", c.render.method, "a sampling method");
        take!(kv, "render.spp", c.render.spp, "an unsigned integer");
        take!(kv, "sampling.tau", c.sampling.tau, "a number");
        take!(kv, "sampling.top_k", c.sampling.top_k, "an unsigned integer");
        let mut b = (c.sampling.budget.base_spp, c.sampling.budget.boosted_spp, c.sampling.budget.boosted_fraction);
        take!(kv, "sampling.base_spp", b.0, "an unsigned integer");
        take!(kv, "sampling.boosted_spp", b.1, "an unsigned integer");
        take!(kv, "sampling.boosted_fraction", b.2, "a number");
        c.sampling.budget = SampleBudget::new(b.0, b.1, b.2)?;
        if let Some(v) = kv.boolean("sampling.adaptive")? {
            c.sampling.adaptive = v;
        }
        if let Some(v) = kv.boolean("sampling.lift_probe")? {
            c.sampling.lift_probe = v;
        }
        if let Some(v) = kv.list("bench.methods", "sampling methods")? {
            c.bench.methods = v;
        }
        if let Some(v) = kv.list("bench.spp", "unsigned integers")? {
            c.bench.spp = v;
        }
        take!(kv, "bench.trials", c.bench.trials, "an unsigned integer");
        take!(kv, "bench.proposal", c.bench.proposal, "`checkpoint` or `oracle`");
        if let Some(v) = kv.boolean("bench.previews")? {
            c.bench.previews = v;
        }
        if let Some(v) = kv.get("proposal.checkpoint") {
            c.proposal.checkpoint = PathBuf::from(v);
        }
        take!(kv, "proposal.hidden", c.proposal.net.hidden, "an unsigned integer");
        take!(kv, "proposal.low_convs", c.proposal.net.low_convs, "an unsigned integer");
        take!(kv, "proposal.mid_convs", c.proposal.net.mid_convs, "an unsigned integer");
        take!(kv, "proposal.high_convs", c.proposal.net.high_convs, "an unsigned integer");
        take!(kv, "proposal.head_convs", c.proposal.net.head_convs, "an unsigned integer");
        take!(kv, "proposal.blur_sigma", c.proposal.blur_sigma, "a number");
        take!(kv, "proposal.suppress_eps", c.proposal.suppress_eps, "a number");
        c.proposal.net.bins = c.render.bins;
        c.train.blur_sigma = c.proposal.blur_sigma;
        c.train.suppress_eps = c.proposal.suppress_eps;
        take!(kv, "train.steps", c.train.steps, "an unsigned integer");
        let mut resolution = c.train.high_res();
        take!(kv, "train.resolution", resolution, "an unsigned integer");
        if resolution == 0 || resolution % SCALE != 0 {
            return Err(Error::config(format!("train.resolution must be a positive multiple of {SCALE}")));
        }
        c.train.low_res = resolution / SCALE;
        take!(kv, "train.patch", c.train.patch, "an unsigned integer");
        take!(kv, "train.lr", c.train.adam.lr, "a number");
        take!(kv, "train.beta1", c.train.adam.beta1, "a number");
        take!(kv, "train.beta2", c.train.adam.beta2, "a number");
        take!(kv, "train.max_elevation", c.train.max_elevation, "a number");
        take!(kv, "train.patch_draws", c.train.patch_draws, "an unsigned integer");
        let mut schedule = c.losses.b_target;
        take!(kv, "losses.b_target_start", schedule.start, "a number");
        take!(kv, "losses.b_target_end", schedule.end, "a number");
        take!(kv, "losses.anneal_steps", schedule.steps, "an unsigned integer");
        c.losses.b_target = schedule;
        take!(kv, "losses.lambda_sampler", c.losses.lambda_sampler, "a number");
        take!(kv, "losses.lambda_surface", c.losses.lambda_surface, "a number");
        take!(kv, "losses.lambda_dec", c.losses.lambda_dec, "a number");
        c.validate()?;
        Ok(c)
    }

    /// Every known key with its effective value, in [`KNOWN_KEYS`] order.
    /// Parsing the result reproduces the configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |v: Vec<String>| v.join(", ");
        let b = &self.sampling.budget;
        let t = &self.train;
        let l = &self.losses;
        let n = &self.proposal.net;
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.workers.to_string(),
            self.deterministic.to_string(),
            format!("\"{}\"", self.out_dir.display()),
            self.scene.name.clone(),
            self.scene.beta.map(|b| b.to_string()).unwrap_or_default(),
            self.scene.width.to_string(),
            self.scene.height.to_string(),
            self.render.bins.to_string(),
            self.render.reference_samples.to_string(),
            self.render.method.to_string(),
            self.render.spp.to_string(),
            self.sampling.tau.to_string(),
            self.sampling.top_k.to_string(),
            b.base_spp.to_string(),
            b.boosted_spp.to_string(),
            b.boosted_fraction.to_string(),
            self.sampling.adaptive.to_string(),
            self.sampling.lift_probe.to_string(),
            join(self.bench.methods.iter().map(|m| m.to_string()).collect()),
            join(self.bench.spp.iter().map(|s| s.to_string()).collect()),
            self.bench.trials.to_string(),
            self.bench.proposal.to_string(),
            self.bench.previews.to_string(),
            format!("\"{}\"", self.proposal.checkpoint.display()),
            n.hidden.to_string(),
            n.low_convs.to_string(),
            n.mid_convs.to_string(),
            n.high_convs.to_string(),
            n.head_convs.to_string(),
            self.proposal.blur_sigma.to_string(),
            self.proposal.suppress_eps.to_string(),
            t.steps.to_string(),
            t.high_res().to_string(),
            t.patch.to_string(),
            t.adam.lr.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.max_elevation.to_string(),
            t.patch_draws.to_string(),
            l.b_target.start.to_string(),
            l.b_target.end.to_string(),
            l.b_target.steps.to_string(),
            l.lambda_sampler.to_string(),
            l.lambda_surface.to_string(),
            l.lambda_dec.to_string(),
        ];
        KNOWN_KEYS.iter().copied().zip(values).collect()
    }

    /// `key = value` lines that [`Config::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().filter(|(_, v)| !v.is_empty()).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene.width == 0 || self.scene.height == 0 {
            return Err(Error::config("scene.width and scene.height must be positive"));
        }
        if self.render.bins < 2 || self.render.reference_samples == 0 || self.render.spp == 0 {
            return Err(Error::config("render.bins must be ≥ 2 and sample counts ≥ 1"));
        }
        if !(self.sampling.tau > 0.0 && self.sampling.tau <= 1.0) {
            return Err(Error::config(format!("sampling.tau must lie in (0, 1], got {}", self.sampling.tau)));
        }
        if self.sampling.top_k == 0 || self.sampling.top_k >= self.render.bins {
            return Err(Error::config("sampling.top_k must lie in [1, render.bins)"));
        }
        if self.bench.spp.is_empty() || self.bench.spp.contains(&0) {
            return Err(Error::config("bench.spp values must be ≥ 1"));
        }
        if self.bench.trials == 0 || self.bench.methods.is_empty() {
            return Err(Error::config("bench.trials must be ≥ 1 and bench.methods non-empty"));
        }
        self.proposal.net.validate()?;
        self.train.validate()?;
        self.losses.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys_are_equivalent() {
        let a = Config::parse("[bench]\nspp = 2, 8 # two counts\ntrials = 4\n").unwrap();
        let b = Config::parse("bench.spp = 2,8\nbench.trials=4").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bench.spp, vec![2, 8]);
    }

    #[test]
    fn parses_every_section() {
        let text = r#"
            seed = 7
            workers = 4
            deterministic = true
            out_dir = "runs/a # not a comment"
            [scene]
            name = torus
            beta = 0.01
            [sampling]
            tau = 0.95
            adaptive = yes
            [bench]
            methods = robust, uniform-dense
            proposal = oracle
            [train]
            resolution = 64
            lr = 0.0005
            [losses]
            lambda_dec = 0.5
        "#;
        let c = Config::parse(text).unwrap();
        assert_eq!((c.seed, c.workers, c.deterministic), (7, 4, true));
        assert_eq!(c.out_dir, PathBuf::from("runs/a # not a comment"));
        assert_eq!((c.scene.name.as_str(), c.scene.beta), ("torus", Some(0.01)));
        assert!(c.sampling.adaptive && c.sampling.tau == 0.95);
        assert_eq!(c.bench.methods, vec![Method::Robust, Method::UniformDense]);
        assert_eq!(c.bench.proposal, ProposalMode::Oracle);
        assert_eq!((c.train.low_res, c.train.adam.lr), (16, 0.0005));
        assert_eq!(c.losses.lambda_dec, 0.5);
    }

    #[test]
    fn text_form_round_trips() {
        let mut c = Config::parse("scene.beta = 0.02\nbench.spp = 3, 5\ntrain.lr = 0.0001\n").unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        c = Config::default();
        assert_eq!(c.entries().len(), KNOWN_KEYS.len());
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let err = Config::parse("seed = 1\nbench.trials = many\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bench.trials"), "{err}");
        assert!(Config::parse("colour = red").unwrap_err().to_string().contains("unknown key"));
        assert!(Config::parse("seed = 1\nseed = 2").unwrap_err().to_string().contains("already set"));
        assert!(Config::parse("[bench\n").is_err());
        assert!(Config::parse("just words").is_err());
        assert!(Config::parse("sampling.tau = 1.5").is_err());
        assert!(Config::parse("bench.spp = 0, 2").is_err());
        assert!(Config::parse("bench.methods = fancy").is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let mut kv = KeyValues::parse("seed = 1").unwrap();
        kv.set("seed=9").unwrap();
        kv.set("bench.spp = 3").unwrap();
        let c = Config::from_key_values(&kv).unwrap();
        assert_eq!((c.seed, c.bench.spp.clone()), (9, vec![3]));
        assert!(kv.set("noequals").is_err());
    }

    #[test]
    fn defaults_are_valid() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.proposal.net, ProposalConfig::default());
        assert!((c.sampling.budget.mean_spp() - 17.6).abs() < 1e-12);
    }
}
