use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use atseg_core::datasets::{self, DatasetManifest, PatchEntry, Split, SplitPolicy};
use atseg_core::eval::{self, DiceTally, ScoreMatrix};
use atseg_core::features::{self, ManifestSource, PatchSource};
use atseg_core::gbdt::{self, BoostedEnsemble};
use atseg_core::rng::stream_seed;
use atseg_core::synth::{self, SynthSpec};
use atseg_core::tensorio;
use atseg_core::{DiceReport, Error};
use serde::{Deserialize, Serialize};

use crate::config::{config_error, BenchmarkArgs, ModelArgs, RunConfig, SplitChoice, SynthArgs};

pub const MODEL_FILE: &str = "model.atsg";
pub const MODEL_META: &str = "model.meta.json";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Sidecar written next to a model so later commands know which feature set it expects.
#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    dataset: String,
    models: Vec<String>,
    num_classes: usize,
    num_features: usize,
    seed: u64,
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

/// Loads a manifest and assigns train/test for random-split datasets.
fn load_split_manifest(path: &Path, cfg: &RunConfig, seed: u64) -> anyhow::Result<DatasetManifest> {
    let manifest = datasets::load_manifest(path, cfg.strict)?;
    Ok(datasets::materialize_split(
        &manifest,
        seed,
        cfg.test_fraction,
    )?)
}

fn entries_for(manifest: &DatasetManifest, split: SplitChoice) -> Vec<&PatchEntry> {
    match split {
        SplitChoice::Train => manifest.entries_in(Split::Train).collect(),
        SplitChoice::Test => manifest.entries_in(Split::Test).collect(),
        SplitChoice::All => manifest.entries.iter().collect(),
    }
}

fn model_set_label(models: &[String]) -> String {
    models.join("+")
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> anyhow::Result<()> {
    if args.images == 0 {
        return Err(config_error("--images must be at least 1"));
    }
    let base = SynthSpec {
        height: args.height,
        width: args.width,
        num_classes: args.classes,
        blob_count: args.blobs,
        noise_sigma: args.noise,
        informative_classes: args.informative.clone(),
        channels_per_class: args.channels_per_class,
        seed: cfg.seed(),
    };
    if args.complementary && args.classes < 4 {
        return Err(config_error("--complementary needs --classes >= 4"));
    }
    base.validate().map_err(|e| config_error(e.to_string()))?;

    create_dir(&cfg.out)?;
    let model_ids: Vec<&str> = if args.complementary {
        vec!["synthA", "synthB"]
    } else {
        vec!["synth"]
    };
    let mut entries = Vec::with_capacity(args.images);
    for i in 0..args.images {
        let id = format!("img{i:04}");
        let spec = SynthSpec {
            seed: stream_seed(cfg.seed(), "scene", i as u64),
            ..base.clone()
        };
        let (mask, maps) = if args.complementary {
            let (m, a, b) = synth::generate_complementary_pair(&spec)?;
            (m, vec![a, b])
        } else {
            let (m, f) = synth::generate_scene(&spec)?;
            (m, vec![f])
        };
        let mask_name = format!("{id}.mask.npy");
        tensorio::write_mask(&mask, cfg.out.join(&mask_name))?;
        let mut feature_paths = std::collections::BTreeMap::new();
        for (model, fmap) in model_ids.iter().zip(&maps) {
            let name = format!("{id}.{model}.npy");
            tensorio::write_features(fmap, cfg.out.join(&name))?;
            feature_paths.insert(model.to_string(), PathBuf::from(name));
        }
        entries.push(PatchEntry {
            id,
            mask_path: mask_name.into(),
            feature_paths,
            split: Split::Unassigned,
        });
    }
    let manifest = DatasetManifest {
        name: args.name.clone(),
        num_classes: args.classes,
        class_names: (0..args.classes).map(|c| format!("class{c}")).collect(),
        ignore_value: tensorio::DEFAULT_IGNORE,
        magnification: "synthetic".into(),
        patch_shape: (args.height, args.width),
        split_policy: SplitPolicy::Random,
        entries,
        base_dir: cfg.out.clone(),
    };
    let manifest_path = cfg.out.join("manifest.json");
    write_file(&manifest_path, manifest.to_json())?;
    println!(
        "wrote {} scenes ({}) and {}",
        args.images,
        model_ids.join(", "),
        manifest_path.display()
    );
    Ok(())
}

/// Trains on the manifest's train split; returns the model and per-round losses.
fn train_on(
    manifest: &DatasetManifest,
    models: &[String],
    cfg: &RunConfig,
    seed: u64,
) -> anyhow::Result<gbdt::TrainOutcome> {
    let train: Vec<&PatchEntry> = manifest.entries_in(Split::Train).collect();
    if train.is_empty() {
        return Err(config_error(format!(
            "manifest `{}` has an empty train split",
            manifest.name
        )));
    }
    let source = ManifestSource::new(manifest);
    let table = features::build_pixel_table(
        &train,
        models,
        &source,
        &cfg.sampling(seed),
        manifest.ignore_value,
    )?;
    if table.is_empty() {
        return Err(Error::Data(format!(
            "train split of `{}` has no labeled pixels",
            manifest.name
        ))
        .into());
    }
    Ok(gbdt::train_with_log(
        &table,
        manifest.num_classes,
        &cfg.hyper,
        seed,
    )?)
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let models = cfg.require_models()?.to_vec();
    let seed = cfg.seed();
    let manifest = load_split_manifest(cfg.single_manifest()?, cfg, seed)?;
    let started = Instant::now();
    let outcome = train_on(&manifest, &models, cfg, seed)?;
    let elapsed = started.elapsed();

    create_dir(&cfg.out)?;
    gbdt::save_model(&outcome.model, cfg.out.join(MODEL_FILE))?;
    let meta = ModelMeta {
        dataset: manifest.name.clone(),
        models: models.clone(),
        num_classes: outcome.model.num_classes(),
        num_features: outcome.model.num_features(),
        seed,
    };
    write_file(
        &cfg.out.join(MODEL_META),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;

    let mut log = String::from("round,train_loss\n");
    for (r, loss) in outcome.round_losses.iter().enumerate() {
        let _ = writeln!(log, "{},{loss:.10}", r + 1);
    }
    if !cfg.deterministic {
        let _ = writeln!(log, "# elapsed_seconds,{:.3}", elapsed.as_secs_f64());
    }
    write_file(&cfg.out.join(TRAIN_LOG), log)?;
    println!(
        "trained {} rounds x {} classes on {} features ({}); model in {}",
        outcome.model.rounds(),
        outcome.model.num_classes(),
        outcome.model.num_features(),
        model_set_label(&models),
        cfg.out.join(MODEL_FILE).display()
    );
    Ok(())
}

struct LoadedModel {
    model: BoostedEnsemble,
    models: Vec<String>,
    seed: u64,
}

fn load_trained(cfg: &RunConfig, args: &ModelArgs) -> anyhow::Result<LoadedModel> {
    let path = args
        .model_file
        .clone()
        .unwrap_or_else(|| cfg.out.join(MODEL_FILE));
    let model = gbdt::load_model(&path)?;
    let meta_path = path.with_file_name(MODEL_META);
    let meta: Option<ModelMeta> = fs::read_to_string(&meta_path)
        .ok()
        .map(|text| serde_json::from_str(&text))
        .transpose()
        .with_context(|| format!("reading {}", meta_path.display()))?;
    let models = if !cfg.models.is_empty() {
        cfg.models.clone()
    } else if let Some(meta) = &meta {
        meta.models.clone()
    } else {
        return Err(config_error(
            "--models is required (no model.meta.json next to the model)",
        ));
    };
    // the split must match the one used for training unless a seed is given explicitly
    let seed = cfg.seed.unwrap_or_else(|| model.seed());
    Ok(LoadedModel {
        model,
        models,
        seed,
    })
}

fn predict_entry(
    model: &BoostedEnsemble,
    source: &dyn PatchSource,
    entry: &PatchEntry,
    models: &[String],
) -> anyhow::Result<(tensorio::LabelMask, tensorio::LabelMask)> {
    let truth = source.mask(entry)?;
    let fmap = features::entry_features(source, entry, models, truth.height(), truth.width())?;
    let pred = features::predict_mask(model, &fmap).map_err(|e| match e {
        Error::Shape(msg) => Error::Shape(format!("entry `{}`: {msg}", entry.id)),
        other => other,
    })?;
    Ok((pred, truth))
}

pub fn predict(cfg: &RunConfig, args: &ModelArgs) -> anyhow::Result<()> {
    let loaded = load_trained(cfg, args)?;
    let manifest = load_split_manifest(cfg.single_manifest()?, cfg, loaded.seed)?;
    let entries = entries_for(&manifest, args.split);
    let source = ManifestSource::new(&manifest);
    let dir = cfg.out.join("pred");
    create_dir(&dir)?;
    for entry in &entries {
        let (pred, _) = predict_entry(&loaded.model, &source, entry, &loaded.models)?;
        tensorio::write_mask(&pred, dir.join(format!("{}.pred.npy", entry.id)))?;
    }
    println!(
        "wrote {} predicted masks to {}",
        entries.len(),
        dir.display()
    );
    Ok(())
}

fn evaluate_on(
    model: &BoostedEnsemble,
    manifest: &DatasetManifest,
    models: &[String],
    split: SplitChoice,
) -> anyhow::Result<DiceReport> {
    let entries = entries_for(manifest, split);
    if entries.is_empty() {
        return Err(config_error(format!(
            "manifest `{}` has no {} entries",
            manifest.name,
            format!("{split:?}").to_lowercase()
        )));
    }
    if model.num_classes() != manifest.num_classes {
        return Err(Error::Shape(format!(
            "model has {} classes, manifest `{}` has {}",
            model.num_classes(),
            manifest.name,
            manifest.num_classes
        ))
        .into());
    }
    let source = ManifestSource::new(manifest);
    let mut tally = DiceTally::new(manifest.num_classes, manifest.ignore_value);
    for entry in entries {
        let (pred, truth) = predict_entry(model, &source, entry, models)?;
        tally.add(&pred, &truth)?;
    }
    Ok(tally
        .report()
        .with_labels(&manifest.name, models, &manifest.class_names))
}

pub fn evaluate(cfg: &RunConfig, args: &ModelArgs) -> anyhow::Result<()> {
    let loaded = load_trained(cfg, args)?;
    let manifest = load_split_manifest(cfg.single_manifest()?, cfg, loaded.seed)?;
    let report = evaluate_on(&loaded.model, &manifest, &loaded.models, args.split)?;
    create_dir(&cfg.out)?;
    let stem = cfg.out.join("report");
    eval::emit_report(std::slice::from_ref(&report), None, &stem)?;
    print!("{}", eval::text_table(std::slice::from_ref(&report), None));
    Ok(())
}

fn parse_model_sets(cfg: &RunConfig, args: &BenchmarkArgs) -> anyhow::Result<Vec<Vec<String>>> {
    let sets: Vec<Vec<String>> = if args.model_sets.is_empty() {
        if cfg.models.is_empty() {
            Vec::new()
        } else {
            vec![cfg.models.clone()]
        }
    } else {
        args.model_sets
            .iter()
            .map(|s| {
                s.split(',')
                    .map(|m| m.trim().to_string())
                    .filter(|m| !m.is_empty())
                    .collect()
            })
            .collect()
    };
    if sets.iter().any(Vec::is_empty) {
        return Err(config_error("empty --model-set"));
    }
    Ok(sets)
}

fn read_scores(path: &Path) -> anyhow::Result<ScoreMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ScoreMatrix::from_csv(&text).map_err(|e| config_error(e.to_string()))
}

pub fn benchmark(cfg: &RunConfig, args: &BenchmarkArgs) -> anyhow::Result<()> {
    let sets = parse_model_sets(cfg, args)?;
    if cfg.manifests.is_empty() && cfg.scores.is_none() {
        return Err(config_error(
            "benchmark needs --manifest (with model sets) or --scores",
        ));
    }
    if !cfg.manifests.is_empty() && sets.is_empty() {
        return Err(config_error("benchmark needs --models or --model-set"));
    }
    let seed = cfg.seed();
    let mut scores = ScoreMatrix::new();
    let mut reports = Vec::new();
    for path in &cfg.manifests {
        let manifest = load_split_manifest(path, cfg, seed)?;
        for models in &sets {
            let outcome = train_on(&manifest, models, cfg, seed)?;
            let report = evaluate_on(&outcome.model, &manifest, models, SplitChoice::Test)?;
            scores.insert(&manifest.name, &model_set_label(models), report.mean_dice);
            println!(
                "{} / {}: mean Dice {:.4}",
                manifest.name,
                model_set_label(models),
                report.mean_dice
            );
            reports.push(report);
        }
    }
    if let Some(path) = &cfg.scores {
        let given = read_scores(path)?;
        for d in given.datasets() {
            for m in given.models() {
                if let Some(s) = given.get(d, m) {
                    if scores.get(d, m).is_none() {
                        scores.insert(d, m, s);
                    }
                }
            }
        }
    }
    if let Some((d, m)) = scores.missing().first() {
        return Err(config_error(format!(
            "no score for `{m}` on `{d}`; run it or supply it via --scores"
        )));
    }
    let ranks = eval::rank_models(&scores).map_err(|e| config_error(e.to_string()))?;
    create_dir(&cfg.out)?;
    let stem = cfg.out.join("benchmark");
    eval::emit_report(&reports, Some(&ranks), &stem)?;
    print!("{}", eval::text_table(&reports, Some(&ranks)));
    Ok(())
}

pub fn rank(cfg: &RunConfig) -> anyhow::Result<()> {
    let path = cfg
        .scores
        .as_ref()
        .ok_or_else(|| config_error("rank needs --scores"))?;
    let ranks = eval::rank_models(&read_scores(path)?).map_err(|e| config_error(e.to_string()))?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("ranks.csv"), eval::rank_csv(&ranks))?;
    let table = eval::text_table(&[], Some(&ranks));
    write_file(&cfg.out.join("ranks.txt"), &table)?;
    print!("{table}");
    Ok(())
}
