//! Versioned little-endian model file.
//!
//! ```text
//! magic            8 bytes  "ATSGBDT1"
//! version          u32      1
//! num_classes      u32
//! num_features     u32
//! rounds           u32
//! seed             u64
//! learning_rate    f64
//! max_depth        u32
//! lambda           f64
//! gamma            f64
//! min_child_weight f64
//! max_bins         u32
//! hessian_floor    f64
//! per feature:     u32 boundary count, then that many f32 boundaries
//! per tree (round-major, rounds * num_classes trees):
//!     u32 node count, then per node:
//!     u32 feature (0xFFFFFFFF = leaf), u8 bin, u32 left, u32 right, f64 weight
//! ```
//!
//! Split thresholds are not stored; they are recovered from the boundaries on load.

use std::fs;
use std::path::Path;

use super::binning::BinningScheme;
use super::tree::{RegressionTree, TreeNode, LEAF};
use super::{BoostedEnsemble, Hyperparams};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"ATSGBDT1";
pub const MODEL_VERSION: u32 = 1;

pub fn model_to_bytes(model: &BoostedEnsemble) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    let h = model.hyper();
    let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32s(&mut out, MODEL_VERSION as usize);
    u32s(&mut out, model.num_classes());
    u32s(&mut out, model.num_features());
    u32s(&mut out, h.rounds);
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&h.learning_rate.to_le_bytes());
    u32s(&mut out, h.max_depth);
    out.extend_from_slice(&h.lambda.to_le_bytes());
    out.extend_from_slice(&h.gamma.to_le_bytes());
    out.extend_from_slice(&h.min_child_weight.to_le_bytes());
    u32s(&mut out, h.max_bins);
    out.extend_from_slice(&h.hessian_floor.to_le_bytes());
    for f in 0..model.num_features() {
        let b = model.binning().boundaries(f);
        u32s(&mut out, b.len());
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for tree in model.trees() {
        u32s(&mut out, tree.nodes().len());
        for n in tree.nodes() {
            out.extend_from_slice(&n.feature.to_le_bytes());
            out.push(n.bin);
            out.extend_from_slice(&n.left.to_le_bytes());
            out.extend_from_slice(&n.right.to_le_bytes());
            out.extend_from_slice(&n.weight.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("model file truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        self.u32(what).map(|v| v as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Fails before allocating if `count * unit` bytes cannot possibly remain.
    fn ensure_room(&self, count: usize, unit: usize, what: &str) -> Result<()> {
        match count.checked_mul(unit) {
            Some(n) if n <= self.bytes.len() - self.pos => Ok(()),
            _ => Err(Error::Format(format!(
                "model file truncated: {count} {what} declared"
            ))),
        }
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<BoostedEnsemble> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "model format version {version} is not supported (expected {MODEL_VERSION})"
        )));
    }
    let num_classes = c.count("num_classes")?;
    let num_features = c.count("num_features")?;
    let rounds = c.count("rounds")?;
    let seed = c.u64("seed")?;
    let hyper = Hyperparams {
        rounds,
        learning_rate: c.f64("learning_rate")?,
        max_depth: c.count("max_depth")?,
        lambda: c.f64("lambda")?,
        gamma: c.f64("gamma")?,
        min_child_weight: c.f64("min_child_weight")?,
        max_bins: c.count("max_bins")?,
        hessian_floor: c.f64("hessian_floor")?,
    };
    hyper
        .validate()
        .map_err(|e| Error::Format(format!("stored hyperparameters invalid: {e}")))?;
    if !(2..=255).contains(&num_classes) {
        return Err(Error::Format(format!("invalid class count {num_classes}")));
    }

    c.ensure_room(num_features, 4, "features")?;
    let mut boundaries = Vec::with_capacity(num_features);
    for _ in 0..num_features {
        let n = c.count("boundary count")?;
        c.ensure_room(n, 4, "boundaries")?;
        boundaries.push(
            (0..n)
                .map(|_| c.f32("boundary"))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let binning = BinningScheme::from_boundaries(boundaries)?;

    let num_trees = rounds
        .checked_mul(num_classes)
        .ok_or_else(|| Error::Format("tree count overflows".into()))?;
    c.ensure_room(num_trees, 4, "trees")?;
    let mut trees = Vec::with_capacity(num_trees);
    for t in 0..num_trees {
        let n = c.count("node count")?;
        if n == 0 {
            return Err(Error::Format(format!("tree {t} has no nodes")));
        }
        c.ensure_room(n, 21, "nodes")?;
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let feature = c.u32("node feature")?;
            let bin = c.u8("node bin")?;
            let left = c.u32("node left")?;
            let right = c.u32("node right")?;
            let weight = c.f64("node weight")?;
            if !weight.is_finite() {
                return Err(Error::Format(format!(
                    "tree {t} node {i}: non-finite weight"
                )));
            }
            let threshold = if feature == LEAF {
                0.0
            } else {
                let f = feature as usize;
                if f >= num_features {
                    return Err(Error::Format(format!(
                        "tree {t} node {i}: feature {f} out of range"
                    )));
                }
                let b = binning.boundaries(f);
                if bin as usize >= b.len() {
                    return Err(Error::Format(format!(
                        "tree {t} node {i}: bin {bin} out of range"
                    )));
                }
                // children strictly after the parent keeps the node graph acyclic
                let ok = |child: u32| (child as usize) > i && (child as usize) < n;
                if !ok(left) || !ok(right) || left == right {
                    return Err(Error::Format(format!(
                        "tree {t} node {i}: bad child indices"
                    )));
                }
                b[bin as usize]
            };
            nodes.push(TreeNode {
                feature,
                bin,
                threshold,
                left,
                right,
                weight,
            });
        }
        trees.push(RegressionTree { nodes });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tree",
            bytes.len() - c.pos
        )));
    }
    BoostedEnsemble::from_parts(num_classes, num_features, trees, binning, hyper, seed)
}

pub fn save_model(model: &BoostedEnsemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BoostedEnsemble> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
