//! From per-image feature maps to pixel-level training rows.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::datasets::{DatasetManifest, PatchEntry};
use crate::error::{Error, Result};
use crate::gbdt::BoostedEnsemble;
use crate::rng::{stream_seed, SeededRng};
use crate::tensorio::{self, FeatureMap, LabelMask};

pub const DEFAULT_MAX_PIXELS_PER_CLASS: usize = 2000;

/// Source pixel of one table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelOrigin {
    /// Index into [`PixelTable::entry_ids`].
    pub entry: u32,
    pub y: u32,
    pub x: u32,
}

/// Row-major training matrix with aligned labels and per-row provenance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelTable {
    num_features: usize,
    values: Vec<f32>,
    labels: Vec<u8>,
    origins: Vec<PixelOrigin>,
    entry_ids: Vec<String>,
}

impl PixelTable {
    pub fn empty(num_features: usize) -> Self {
        Self {
            num_features,
            ..Self::default()
        }
    }

    /// Builds a table from a plain matrix. Provenance records each row as pixel `(row, 0)`
    /// of a single pseudo-entry named `matrix`.
    pub fn from_matrix(num_features: usize, values: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::Argument(
                "pixel table needs at least one feature".into(),
            ));
        }
        if values.len() != labels.len() * num_features {
            return Err(Error::Shape(format!(
                "{} values do not form {} rows of {num_features} features",
                values.len(),
                labels.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {pos}")));
        }
        let origins = (0..labels.len())
            .map(|r| PixelOrigin {
                entry: 0,
                y: r as u32,
                x: 0,
            })
            .collect();
        Ok(Self {
            num_features,
            values,
            labels,
            origins,
            entry_ids: vec!["matrix".to_string()],
        })
    }

    pub fn num_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn origins(&self) -> &[PixelOrigin] {
        &self.origins
    }

    pub fn entry_ids(&self) -> &[String] {
        &self.entry_ids
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.num_features..(i + 1) * self.num_features]
    }

    /// Feature `f` of every row, in row order.
    pub fn column(&self, f: usize) -> impl Iterator<Item = f32> + '_ {
        self.values
            .iter()
            .skip(f)
            .step_by(self.num_features)
            .copied()
    }

    fn append(&mut self, chunk: EntryRows, entry_id: &str) {
        let entry = self.entry_ids.len() as u32;
        self.entry_ids.push(entry_id.to_string());
        self.values.extend_from_slice(&chunk.values);
        self.labels.extend_from_slice(&chunk.labels);
        self.origins.extend(
            chunk
                .pixels
                .iter()
                .map(|&(y, x)| PixelOrigin { entry, y, x }),
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingPolicy {
    pub max_pixels_per_class_per_image: usize,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            max_pixels_per_class_per_image: DEFAULT_MAX_PIXELS_PER_CLASS,
            seed: 0,
        }
    }
}

/// Supplies masks and per-model feature maps for manifest entries.
pub trait PatchSource: Sync {
    fn mask(&self, entry: &PatchEntry) -> Result<LabelMask>;
    fn features(&self, entry: &PatchEntry, model_id: &str) -> Result<FeatureMap>;
}

/// Loads tensors from the paths recorded in a manifest.
pub struct ManifestSource<'a> {
    manifest: &'a DatasetManifest,
}

impl<'a> ManifestSource<'a> {
    pub fn new(manifest: &'a DatasetManifest) -> Self {
        Self { manifest }
    }
}

impl PatchSource for ManifestSource<'_> {
    fn mask(&self, entry: &PatchEntry) -> Result<LabelMask> {
        let mask = tensorio::read_mask(self.manifest.resolve(&entry.mask_path))?
            .with_ignore(self.manifest.ignore_value);
        mask.validate_classes(self.manifest.num_classes)
            .map_err(|e| Error::Data(format!("entry `{}`: {e}", entry.id)))?;
        Ok(mask)
    }

    fn features(&self, entry: &PatchEntry, model_id: &str) -> Result<FeatureMap> {
        let path = entry
            .feature_paths
            .get(model_id)
            .ok_or_else(|| missing(entry, model_id))?;
        tensorio::read_features(self.manifest.resolve(path))
    }
}

/// In-memory tensors keyed by entry id (and model id for features).
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    masks: HashMap<String, LabelMask>,
    features: HashMap<(String, String), FeatureMap>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_mask(&mut self, entry_id: &str, mask: LabelMask) {
        self.masks.insert(entry_id.to_string(), mask);
    }

    pub fn insert_features(&mut self, entry_id: &str, model_id: &str, fmap: FeatureMap) {
        self.features
            .insert((entry_id.to_string(), model_id.to_string()), fmap);
    }
}

impl PatchSource for MemorySource {
    fn mask(&self, entry: &PatchEntry) -> Result<LabelMask> {
        self.masks
            .get(&entry.id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no mask for entry `{}`", entry.id)))
    }

    fn features(&self, entry: &PatchEntry, model_id: &str) -> Result<FeatureMap> {
        self.features
            .get(&(entry.id.clone(), model_id.to_string()))
            .cloned()
            .ok_or_else(|| missing(entry, model_id))
    }
}

fn missing(entry: &PatchEntry, model_id: &str) -> Error {
    Error::Data(format!(
        "entry `{}` has no features for model `{model_id}`",
        entry.id
    ))
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-center source taps: `s = (i + 0.5) * src / dst - 0.5`, clamped to `[0, src - 1]`.
fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(src - 1),
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize of every channel to `out_h x out_w`.
pub fn upsample_bilinear(f: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "upsample target must be positive, got {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (f.height(), f.width()) {
        return Ok(f.clone());
    }
    let channels = f.channels();
    let ys = taps(f.height(), out_h);
    let xs = taps(f.width(), out_w);
    let mut out = vec![0f32; out_h * out_w * channels];
    out.par_chunks_mut(out_w * channels)
        .zip(ys.par_iter())
        .for_each(|(row, ty)| {
            for (j, tx) in xs.iter().enumerate() {
                let dst = &mut row[j * channels..(j + 1) * channels];
                let a = f.pixel(ty.lo, tx.lo);
                let b = f.pixel(ty.lo, tx.hi);
                let c = f.pixel(ty.hi, tx.lo);
                let d = f.pixel(ty.hi, tx.hi);
                for ch in 0..channels {
                    let (a, b, c, d) = (a[ch] as f64, b[ch] as f64, c[ch] as f64, d[ch] as f64);
                    let top = a + tx.frac * (b - a);
                    let bottom = c + tx.frac * (d - c);
                    let v = top + ty.frac * (bottom - top);
                    // exact bilinear values never leave the neighbour range; clamp away rounding
                    let lo = a.min(b).min(c).min(d);
                    let hi = a.max(b).max(c).max(d);
                    dst[ch] = v.clamp(lo, hi) as f32;
                }
            }
        });
    FeatureMap::new(out_h, out_w, channels, out)
}

/// Upsamples each map to `out_h x out_w` and stacks channels in list order.
pub fn concat_models(maps: &[FeatureMap], out_h: usize, out_w: usize) -> Result<FeatureMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Argument("concat_models needs at least one feature map".into()))?;
    if maps.len() == 1 {
        return upsample_bilinear(first, out_h, out_w);
    }
    let resized = maps
        .iter()
        .map(|m| upsample_bilinear(m, out_h, out_w))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = resized.iter().map(FeatureMap::channels).sum();
    let mut out = Vec::with_capacity(out_h * out_w * total);
    for p in 0..out_h * out_w {
        for m in &resized {
            let c = m.channels();
            out.extend_from_slice(&m.data()[p * c..(p + 1) * c]);
        }
    }
    FeatureMap::new(out_h, out_w, total, out)
}

/// Loads and concatenates the configured models for `entry` at `out_h x out_w`.
pub fn entry_features(
    source: &dyn PatchSource,
    entry: &PatchEntry,
    model_ids: &[String],
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap> {
    let maps = model_ids
        .iter()
        .map(|m| source.features(entry, m))
        .collect::<Result<Vec<_>>>()?;
    concat_models(&maps, out_h, out_w)
}

struct EntryRows {
    values: Vec<f32>,
    labels: Vec<u8>,
    pixels: Vec<(u32, u32)>,
}

/// Reservoir sample (algorithm R) of at most `cap` items, in reservoir slot order.
fn reservoir(items: &[u32], cap: usize, rng: &mut SeededRng) -> Vec<u32> {
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut kept = items[..cap].to_vec();
    for (i, &item) in items.iter().enumerate().skip(cap) {
        let j = rng.below(i as u64 + 1) as usize;
        if j < cap {
            kept[j] = item;
        }
    }
    kept
}

fn sample_entry(
    entry: &PatchEntry,
    model_ids: &[String],
    source: &dyn PatchSource,
    policy: &SamplingPolicy,
    ignore_value: u8,
) -> Result<EntryRows> {
    let mask = source.mask(entry)?;
    let (h, w) = (mask.height(), mask.width());
    let fmap = entry_features(source, entry, model_ids, h, w)?;

    let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); 256];
    for (p, &label) in mask.data().iter().enumerate() {
        if label != ignore_value {
            by_class[label as usize].push(p as u32);
        }
    }
    let mut rows = EntryRows {
        values: Vec::new(),
        labels: Vec::new(),
        pixels: Vec::new(),
    };
    for (class, pixels) in by_class.iter().enumerate().filter(|(_, p)| !p.is_empty()) {
        let mut rng = SeededRng::new(stream_seed(policy.seed, &entry.id, class as u64));
        for p in reservoir(pixels, policy.max_pixels_per_class_per_image, &mut rng) {
            let (y, x) = (p as usize / w, p as usize % w);
            rows.values.extend_from_slice(fmap.pixel(y, x));
            rows.labels.push(class as u8);
            rows.pixels.push((y as u32, x as u32));
        }
    }
    Ok(rows)
}

/// Class-stratified pixel sample over `entries`.
///
/// Each entry's models are concatenated at mask resolution; every class present
/// in the mask contributes at most `policy.max_pixels_per_class_per_image` pixels,
/// picked by reservoir sampling seeded from `(policy.seed, entry id, class)`.
/// Rows come out in entry order, then class order, then selection order, no matter
/// how the per-entry work is scheduled.
pub fn build_pixel_table(
    entries: &[&PatchEntry],
    model_ids: &[String],
    source: &dyn PatchSource,
    policy: &SamplingPolicy,
    ignore_value: u8,
) -> Result<PixelTable> {
    if model_ids.is_empty() {
        return Err(Error::Argument("model set must not be empty".into()));
    }
    if policy.max_pixels_per_class_per_image == 0 {
        return Err(Error::Argument(
            "max_pixels_per_class_per_image must be at least 1".into(),
        ));
    }
    let chunks = entries
        .par_iter()
        .map(|e| sample_entry(e, model_ids, source, policy, ignore_value))
        .collect::<Vec<_>>();

    let mut table: Option<PixelTable> = None;
    for (entry, chunk) in entries.iter().zip(chunks) {
        let chunk = chunk?;
        let width = if chunk.labels.is_empty() {
            None
        } else {
            Some(chunk.values.len() / chunk.labels.len())
        };
        let t = table.get_or_insert_with(|| PixelTable::empty(width.unwrap_or(0)));
        if let Some(width) = width {
            if t.num_features == 0 {
                t.num_features = width;
            } else if t.num_features != width {
                return Err(Error::Shape(format!(
                    "entry `{}` yields {width} features, earlier entries {}",
                    entry.id, t.num_features
                )));
            }
        }
        t.append(chunk, &entry.id);
    }
    Ok(table.unwrap_or_default())
}

/// Per-pixel argmax of predicted class probabilities (lowest class wins ties).
pub fn predict_mask(model: &BoostedEnsemble, fmap: &FeatureMap) -> Result<LabelMask> {
    if fmap.channels() != model.num_features() {
        return Err(Error::Shape(format!(
            "feature map has {} channels, model expects {}",
            fmap.channels(),
            model.num_features()
        )));
    }
    let labels: Vec<u8> = fmap
        .data()
        .par_chunks(fmap.channels())
        .map(|row| model.predict_class_row(row))
        .collect();
    LabelMask::new(fmap.height(), fmap.width(), labels)
}
