//! Dataset manifests, the backbone registry, and train/test split materialization.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensorio::{self, DEFAULT_IGNORE};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    AuthorGiven,
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    fn is_unassigned(&self) -> bool {
        *self == Split::Unassigned
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub id: String,
    #[serde(rename = "mask")]
    pub mask_path: PathBuf,
    #[serde(rename = "features")]
    pub feature_paths: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Split::is_unassigned")]
    pub split: Split,
}

fn default_ignore() -> u8 {
    DEFAULT_IGNORE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    #[serde(default = "default_ignore")]
    pub ignore_value: u8,
    #[serde(default)]
    pub magnification: String,
    pub patch_shape: (usize, usize),
    pub split_policy: SplitPolicy,
    pub entries: Vec<PatchEntry>,
    /// Directory that relative entry paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Parses and validates manifest JSON. Relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut manifest: DatasetManifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = match e.path().to_string() {
                p if p == "." => "<root>".to_string(),
                p => p,
            };
            Error::manifest(field, e.into_inner().to_string())
        })?;
        manifest.base_dir = base_dir.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Checks the structural invariants; file contents are checked by [`Self::validate_files`].
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::manifest("name", "must not be empty"));
        }
        if self.num_classes == 0 || self.num_classes > 255 {
            return Err(Error::manifest(
                "num_classes",
                format!("must be in 1..=255, got {}", self.num_classes),
            ));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::manifest(
                "class_names",
                format!(
                    "has {} names but num_classes is {}",
                    self.class_names.len(),
                    self.num_classes
                ),
            ));
        }
        if usize::from(self.ignore_value) < self.num_classes {
            return Err(Error::manifest(
                "ignore_value",
                format!(
                    "{} collides with a class index (num_classes {})",
                    self.ignore_value, self.num_classes
                ),
            ));
        }
        if self.patch_shape.0 == 0 || self.patch_shape.1 == 0 {
            return Err(Error::manifest(
                "patch_shape",
                "dimensions must be positive",
            ));
        }
        let mut seen = HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.id.is_empty() {
                return Err(Error::manifest(
                    format!("entries[{i}].id"),
                    "must not be empty",
                ));
            }
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::manifest(
                    format!("entries[{i}].id"),
                    format!("duplicate entry id `{}`", entry.id),
                ));
            }
            if self.split_policy == SplitPolicy::AuthorGiven && entry.split == Split::Unassigned {
                return Err(Error::manifest(
                    format!("entries[{i}].split"),
                    "author_given manifests need an explicit train/test split on every entry",
                ));
            }
        }
        Ok(())
    }

    /// Loads every mask and feature file referenced by the manifest and checks it.
    pub fn validate_files(&self) -> Result<()> {
        for entry in &self.entries {
            let mask =
                tensorio::read_mask(self.resolve(&entry.mask_path))?.with_ignore(self.ignore_value);
            if (mask.height(), mask.width()) != self.patch_shape {
                return Err(Error::Shape(format!(
                    "entry `{}`: mask is {}x{}, manifest patch_shape is {}x{}",
                    entry.id,
                    mask.height(),
                    mask.width(),
                    self.patch_shape.0,
                    self.patch_shape.1
                )));
            }
            mask.validate_classes(self.num_classes)
                .map_err(|e| Error::Data(format!("entry `{}`: {e}", entry.id)))?;
            for path in entry.feature_paths.values() {
                tensorio::read_features(self.resolve(path))?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &PatchEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Reads and validates a manifest file. With `strict`, every referenced file is loaded too.
pub fn load_manifest(path: impl AsRef<Path>, strict: bool) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::from_json(&text, base)?;
    if strict {
        manifest.validate_files()?;
    }
    Ok(manifest)
}

/// Assigns train/test tags to a `random` manifest.
///
/// The entry indices are Fisher-Yates shuffled with a generator seeded by `seed`;
/// the first `ceil((1 - test_fraction) * N)` shuffled entries become train, the rest
/// test. Entry order in the returned manifest is unchanged. Author-given manifests
/// come back as they are.
pub fn materialize_split(
    manifest: &DatasetManifest,
    seed: u64,
    test_fraction: f64,
) -> Result<DatasetManifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    match manifest.split_policy {
        SplitPolicy::AuthorGiven => {
            if let Some(e) = manifest
                .entries
                .iter()
                .find(|e| e.split == Split::Unassigned)
            {
                return Err(Error::Split(format!(
                    "author_given manifest `{}` has unassigned entry `{}`",
                    manifest.name, e.id
                )));
            }
            Ok(manifest.clone())
        }
        SplitPolicy::Random => {
            if let Some(e) = manifest
                .entries
                .iter()
                .find(|e| e.split != Split::Unassigned)
            {
                return Err(Error::Split(format!(
                    "random manifest `{}` already assigns entry `{}`",
                    manifest.name, e.id
                )));
            }
            let n = manifest.entries.len();
            let mut order: Vec<usize> = (0..n).collect();
            SeededRng::new(seed).shuffle(&mut order);
            // 1e-9 keeps (1 - 0.2) * 400 from rounding up to 321
            let n_train = (((1.0 - test_fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let mut out = manifest.clone();
            for (rank, &idx) in order.iter().enumerate() {
                out.entries[idx].split = if rank < n_train {
                    Split::Train
                } else {
                    Split::Test
                };
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Final-block CLS-to-patch attention, one channel per head.
    ClsAttentionHeads,
    /// Decoder-side dense embedding (e.g. a 256x256x64 map).
    DenseEmbedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    pub model_id: String,
    pub display_name: String,
    pub backbone: String,
    pub native_input: (usize, usize),
    pub feature_kind: FeatureKind,
}

const REGISTRY: &[(&str, &str, &str, usize, FeatureKind)] = &[
    (
        "virchow",
        "Virchow",
        "ViT-H",
        224,
        FeatureKind::ClsAttentionHeads,
    ),
    (
        "phikon",
        "Phikon",
        "ViT-B",
        224,
        FeatureKind::ClsAttentionHeads,
    ),
    ("uni", "UNI", "ViT-L", 224, FeatureKind::ClsAttentionHeads),
    ("hipt", "HIPT", "ViT-S", 256, FeatureKind::ClsAttentionHeads),
    (
        "lunit-dino",
        "Lunit DINO",
        "ViT-S",
        224,
        FeatureKind::ClsAttentionHeads,
    ),
    (
        "pathdino",
        "PathDino",
        "ViT Custom",
        512,
        FeatureKind::ClsAttentionHeads,
    ),
    (
        "cellvit",
        "CellViT",
        "ViT-S",
        256,
        FeatureKind::DenseEmbedding,
    ),
    (
        "phikon-v2",
        "Phikon-v2",
        "ViT-L",
        224,
        FeatureKind::ClsAttentionHeads,
    ),
    (
        "virchow2",
        "Virchow2",
        "ViT-H with 4 registers",
        224,
        FeatureKind::ClsAttentionHeads,
    ),
    (
        "conch",
        "CONCH",
        "ViT-B",
        448,
        FeatureKind::ClsAttentionHeads,
    ),
    (
        "vit-b-imagenet",
        "ViT-B (ImageNet)",
        "ViT-B",
        224,
        FeatureKind::ClsAttentionHeads,
    ),
];

/// The benchmarked backbones and their input conventions.
pub fn model_registry() -> Vec<ModelRegistryEntry> {
    REGISTRY
        .iter()
        .map(|&(id, name, backbone, side, kind)| ModelRegistryEntry {
            model_id: id.to_string(),
            display_name: name.to_string(),
            backbone: backbone.to_string(),
            native_input: (side, side),
            feature_kind: kind,
        })
        .collect()
}

pub fn lookup_model(model_id: &str) -> Option<ModelRegistryEntry> {
    model_registry()
        .into_iter()
        .find(|m| m.model_id == model_id)
}
