#![allow(dead_code)]

use std::collections::BTreeMap;

use atseg_core::eval::{DiceReport, DiceTally};
use atseg_core::features::{self, MemorySource, PatchSource};
use atseg_core::gbdt::{self, BoostedEnsemble};
use atseg_core::rng::stream_seed;
use atseg_core::synth::{self, SynthSpec};
use atseg_core::{Hyperparams, PatchEntry, PixelTable, SamplingPolicy, Split};

pub struct SceneSet {
    pub source: MemorySource,
    pub entries: Vec<PatchEntry>,
    pub num_classes: usize,
}

impl SceneSet {
    pub fn split(&self, split: Split) -> Vec<&PatchEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

/// `n_train + n_test` scenes; model `synth`, or `synthA`/`synthB` when `complementary`.
pub fn scene_set(base: &SynthSpec, n_train: usize, n_test: usize, complementary: bool) -> SceneSet {
    let mut source = MemorySource::new();
    let mut entries = Vec::new();
    for i in 0..n_train + n_test {
        let id = format!("img{i:03}");
        let spec = SynthSpec {
            seed: stream_seed(base.seed, "scene", i as u64),
            ..base.clone()
        };
        let mut feature_paths = BTreeMap::new();
        if complementary {
            let (mask, a, b) = synth::generate_complementary_pair(&spec).unwrap();
            source.insert_mask(&id, mask);
            source.insert_features(&id, "synthA", a);
            source.insert_features(&id, "synthB", b);
            feature_paths.insert("synthA".to_string(), format!("{id}.synthA.npy").into());
            feature_paths.insert("synthB".to_string(), format!("{id}.synthB.npy").into());
        } else {
            let (mask, f) = synth::generate_scene(&spec).unwrap();
            source.insert_mask(&id, mask);
            source.insert_features(&id, "synth", f);
            feature_paths.insert("synth".to_string(), format!("{id}.synth.npy").into());
        }
        entries.push(PatchEntry {
            id: id.clone(),
            mask_path: format!("{id}.mask.npy").into(),
            feature_paths,
            split: if i < n_train {
                Split::Train
            } else {
                Split::Test
            },
        });
    }
    SceneSet {
        source,
        entries,
        num_classes: base.num_classes,
    }
}

pub fn models(ids: &[&str]) -> Vec<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

pub fn train_table(set: &SceneSet, models: &[String], seed: u64) -> PixelTable {
    let policy = SamplingPolicy {
        seed,
        ..Default::default()
    };
    features::build_pixel_table(&set.split(Split::Train), models, &set.source, &policy, 255)
        .unwrap()
}

pub fn evaluate(model: &BoostedEnsemble, set: &SceneSet, models: &[String]) -> DiceReport {
    let mut tally = DiceTally::new(set.num_classes, 255);
    for entry in set.split(Split::Test) {
        let truth = set.source.mask(entry).unwrap();
        let fmap =
            features::entry_features(&set.source, entry, models, truth.height(), truth.width())
                .unwrap();
        let pred = features::predict_mask(model, &fmap).unwrap();
        tally.add(&pred, &truth).unwrap();
    }
    tally.report()
}

/// Train on the train split, report test-split Dice.
pub fn fit_and_score(
    set: &SceneSet,
    models: &[String],
    hyper: &Hyperparams,
    seed: u64,
) -> DiceReport {
    let table = train_table(set, models, seed);
    let model = gbdt::train(&table, set.num_classes, hyper, seed).unwrap();
    evaluate(&model, set, models)
}
