//! Decoder-free benchmarking of dense per-pixel features for semantic segmentation.
//!
//! Per-image feature maps (per-head CLS attention or dense embeddings exported from
//! a frozen backbone) are upsampled to label resolution, optionally concatenated
//! across several backbones, and classified pixel by pixel with a histogram
//! gradient-boosted tree ensemble. Predictions are scored with micro-aggregated
//! Dice, and backbones are ordered by their mean rank across datasets.
//!
//! Module map:
//! * [`tensorio`]: `.npy` reader/writer for feature maps and label masks
//! * [`datasets`]: manifests, model registry, reproducible train/test splits
//! * [`features`]: bilinear upsampling, concatenation, pixel sampling, mask prediction
//! * [`gbdt`]: multiclass softmax boosting over histogram-binned features
//! * [`eval`]: Dice, rank tables, CSV/text reports
//! * [`synth`]: seeded synthetic scenes for end-to-end testing

pub mod datasets;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod rng;
pub mod synth;
pub mod tensorio;

pub use datasets::{
    DatasetManifest, FeatureKind, ModelRegistryEntry, PatchEntry, Split, SplitPolicy,
};
pub use error::{Error, Result};
pub use eval::{DiceReport, RankTable, ScoreMatrix};
pub use features::{PixelTable, SamplingPolicy};
pub use gbdt::{BinningScheme, BoostedEnsemble, Hyperparams, RegressionTree};
pub use synth::SynthSpec;
pub use tensorio::{FeatureMap, LabelMask, Tensor};
