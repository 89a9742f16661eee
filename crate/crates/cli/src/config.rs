//! Command-line flags, the optional JSON config file, and their merge.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use atseg_core::datasets::DEFAULT_TEST_FRACTION;
use atseg_core::features::DEFAULT_MAX_PIXELS_PER_CLASS;
use atseg_core::{Hyperparams, SamplingPolicy};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

/// Invalid or incomplete configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(
    name = "atseg",
    version,
    about = "Decoder-free pixel segmentation benchmark"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (tensors + manifest)
    Synth(SynthArgs),
    /// Train a classifier on the train split of a manifest
    Train,
    /// Write predicted masks for a split
    Predict(ModelArgs),
    /// Predict and score a split with per-class Dice
    Evaluate(ModelArgs),
    /// Train and evaluate every dataset x model set, then rank
    Benchmark(BenchmarkArgs),
    /// Rank models from a score CSV
    Rank,
}

#[derive(Debug, Clone, Args, Default)]
pub struct GlobalArgs {
    /// JSON config file with the same keys as the long flags (snake_case); flags win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (repeatable for benchmark)
    #[arg(long, global = true)]
    pub manifest: Vec<PathBuf>,
    /// Ordered model ids; more than one concatenates their features
    #[arg(long, global = true, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Load every referenced tensor while validating manifests
    #[arg(long, global = true)]
    pub strict: bool,
    /// Byte-reproducible output (no timings in logs); on by default
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Score CSV (`dataset,model,score`) for benchmark/rank
    #[arg(long, global = true)]
    pub scores: Option<PathBuf>,

    #[arg(long, global = true)]
    pub rounds: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub min_child_weight: Option<f64>,
    #[arg(long, global = true)]
    pub max_bins: Option<usize>,
    #[arg(long, global = true)]
    pub hessian_floor: Option<f64>,

    #[arg(long, global = true)]
    pub max_pixels_per_class: Option<usize>,
    /// Held-out fraction for manifests with a random split policy
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 12)]
    pub blobs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub channels_per_class: usize,
    /// Informative classes (default: all)
    #[arg(long, value_delimiter = ',')]
    pub informative: Option<Vec<usize>>,
    /// Number of scenes
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    /// Emit two complementary feature sets, `synthA` and `synthB`
    #[arg(long)]
    pub complementary: bool,
    #[arg(long, default_value = "synth")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Trained model (default: <out>/model.atsg)
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// A comma-separated model set; repeatable. Defaults to --models.
    #[arg(long = "model-set")]
    pub model_sets: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<ManifestList>,
    models: Option<Vec<String>>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    strict: Option<bool>,
    deterministic: Option<bool>,
    threads: Option<usize>,
    scores: Option<PathBuf>,
    rounds: Option<usize>,
    learning_rate: Option<f64>,
    max_depth: Option<usize>,
    lambda: Option<f64>,
    gamma: Option<f64>,
    min_child_weight: Option<f64>,
    max_bins: Option<usize>,
    hessian_floor: Option<f64>,
    max_pixels_per_class: Option<usize>,
    test_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ManifestList {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

/// Fully merged settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifests: Vec<PathBuf>,
    pub models: Vec<String>,
    /// `None` when neither flag nor file gave a seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub strict: bool,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub scores: Option<PathBuf>,
    pub hyper: Hyperparams,
    pub max_pixels_per_class: usize,
    pub test_fraction: f64,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn sampling(&self, seed: u64) -> SamplingPolicy {
        SamplingPolicy {
            max_pixels_per_class_per_image: self.max_pixels_per_class,
            seed,
        }
    }

    pub fn single_manifest(&self) -> anyhow::Result<&Path> {
        match self.manifests.as_slice() {
            [one] => Ok(one),
            [] => Err(config_error("--manifest is required")),
            _ => Err(config_error("this command takes exactly one --manifest")),
        }
    }

    pub fn require_models(&self) -> anyhow::Result<&[String]> {
        if self.models.is_empty() {
            Err(config_error("--models must name at least one model id"))
        } else {
            Ok(&self.models)
        }
    }
}

/// Merges flags over the config file over built-in defaults.
pub fn resolve(flags: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let file = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
            let mut cfg: FileConfig = serde_json::from_str(&text)
                .map_err(|e| config_error(format!("config {}: {e}", path.display())))?;
            // relative paths in the config file are relative to the file itself
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let rebase = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
            cfg.manifest = cfg.manifest.map(|m| match m {
                ManifestList::One(p) => ManifestList::Many(vec![rebase(p)]),
                ManifestList::Many(ps) => ManifestList::Many(ps.into_iter().map(rebase).collect()),
            });
            cfg.scores = cfg.scores.map(rebase);
            cfg.out = cfg.out.map(rebase);
            cfg
        }
        None => FileConfig::default(),
    };
    let d = Hyperparams::default();
    let hyper = Hyperparams {
        rounds: flags.rounds.or(file.rounds).unwrap_or(d.rounds),
        learning_rate: flags
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(d.learning_rate),
        max_depth: flags.max_depth.or(file.max_depth).unwrap_or(d.max_depth),
        lambda: flags.lambda.or(file.lambda).unwrap_or(d.lambda),
        gamma: flags.gamma.or(file.gamma).unwrap_or(d.gamma),
        min_child_weight: flags
            .min_child_weight
            .or(file.min_child_weight)
            .unwrap_or(d.min_child_weight),
        max_bins: flags.max_bins.or(file.max_bins).unwrap_or(d.max_bins),
        hessian_floor: flags
            .hessian_floor
            .or(file.hessian_floor)
            .unwrap_or(d.hessian_floor),
    };
    let manifests = if !flags.manifest.is_empty() {
        flags.manifest.clone()
    } else {
        match file.manifest {
            Some(ManifestList::Many(ps)) => ps,
            Some(ManifestList::One(p)) => vec![p],
            None => Vec::new(),
        }
    };
    let max_pixels_per_class = flags
        .max_pixels_per_class
        .or(file.max_pixels_per_class)
        .unwrap_or(DEFAULT_MAX_PIXELS_PER_CLASS);
    if max_pixels_per_class == 0 {
        return Err(config_error("--max-pixels-per-class must be at least 1"));
    }
    Ok(RunConfig {
        manifests,
        models: flags.models.clone().or(file.models).unwrap_or_default(),
        seed: flags.seed.or(file.seed),
        out: flags
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from(".")),
        strict: flags.strict || file.strict.unwrap_or(false),
        deterministic: flags.deterministic.or(file.deterministic).unwrap_or(true),
        threads: flags.threads.or(file.threads),
        scores: flags.scores.clone().or(file.scores),
        hyper,
        max_pixels_per_class,
        test_fraction: flags
            .test_fraction
            .or(file.test_fraction)
            .unwrap_or(DEFAULT_TEST_FRACTION),
    })
}
