//! Multiclass gradient-boosted trees with histogram split finding.
//!
//! Each boosting round fits one regression tree per class to the softmax
//! log-loss gradients. Features are quantile-binned once up front (at most 256
//! bins), node histograms accumulate `(sum g, sum h)` per bin, and splits are
//! chosen greedily by the second-order gain. All reductions run in a fixed
//! order, so the trained ensemble is bit-identical for any worker count.

mod binning;
mod io;
pub mod objective;
mod tree;

use rayon::prelude::*;

pub use binning::{build_bins, BinnedMatrix, BinningScheme, MAX_BINS};
pub use io::{
    load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use tree::{
    find_best_split, grow_tree, split_gain, Histogram, RegressionTree, SplitCandidate, TreeNode,
    LEAF,
};

use crate::error::{Error, Result};
use crate::features::PixelTable;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub max_bins: usize,
    pub hessian_floor: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.3,
            max_depth: 6,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            max_bins: 256,
            hessian_floor: 1e-16,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Argument(what));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            ));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad(format!(
                "min_child_weight must be >= 0, got {}",
                self.min_child_weight
            ));
        }
        if !(2..=MAX_BINS).contains(&self.max_bins) {
            return bad(format!(
                "max_bins must be in 2..={MAX_BINS}, got {}",
                self.max_bins
            ));
        }
        if !(self.hessian_floor > 0.0 && self.hessian_floor.is_finite()) {
            return bad(format!(
                "hessian_floor must be > 0, got {}",
                self.hessian_floor
            ));
        }
        Ok(())
    }
}

/// A trained ensemble: `rounds x num_classes` trees, stored round-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BoostedEnsemble {
    num_classes: usize,
    num_features: usize,
    trees: Vec<RegressionTree>,
    binning: BinningScheme,
    hyper: Hyperparams,
    seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: BoostedEnsemble,
    /// Mean training log-loss after each round.
    pub round_losses: Vec<f64>,
}

impl BoostedEnsemble {
    pub(crate) fn from_parts(
        num_classes: usize,
        num_features: usize,
        trees: Vec<RegressionTree>,
        binning: BinningScheme,
        hyper: Hyperparams,
        seed: u64,
    ) -> Result<Self> {
        if trees.len() != hyper.rounds * num_classes {
            return Err(Error::Format(format!(
                "{} trees for {} rounds x {num_classes} classes",
                trees.len(),
                hyper.rounds
            )));
        }
        if binning.num_features() != num_features {
            return Err(Error::Format(format!(
                "binning covers {} features, model declares {num_features}",
                binning.num_features()
            )));
        }
        Ok(Self {
            num_classes,
            num_features,
            trees,
            binning,
            hyper,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn rounds(&self) -> usize {
        self.hyper.rounds
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn binning(&self) -> &BinningScheme {
        &self.binning
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// The class-`k` tree of round `r`.
    pub fn tree(&self, round: usize, class: usize) -> &RegressionTree {
        &self.trees[round * self.num_classes + class]
    }

    /// Raw margins, accumulated round by round exactly as during training.
    pub fn predict_margins_row(&self, row: &[f32]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.num_features);
        let mut margins = vec![0.0; self.num_classes];
        let eta = self.hyper.learning_rate;
        for round in self.trees.chunks(self.num_classes) {
            for (m, tree) in margins.iter_mut().zip(round) {
                *m += eta * tree.predict(row);
            }
        }
        margins
    }

    pub fn predict_proba_row(&self, row: &[f32]) -> Vec<f64> {
        objective::softmax(&self.predict_margins_row(row))
    }

    /// Argmax of the class probabilities; the lowest class index wins ties.
    pub fn predict_class_row(&self, row: &[f32]) -> u8 {
        let p = self.predict_proba_row(row);
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        best as u8
    }

    /// Class probabilities for a flat row-major matrix of `num_features`-wide rows.
    pub fn predict_proba(&self, rows: &[f32]) -> Result<Vec<Vec<f64>>> {
        if self.num_features == 0 || !rows.len().is_multiple_of(self.num_features) {
            return Err(Error::Shape(format!(
                "{} values are not whole rows of {} features",
                rows.len(),
                self.num_features
            )));
        }
        Ok(rows
            .par_chunks(self.num_features)
            .map(|r| self.predict_proba_row(r))
            .collect())
    }

    pub fn predict_table(&self, table: &PixelTable) -> Result<Vec<Vec<f64>>> {
        if table.num_features() != self.num_features {
            return Err(Error::Shape(format!(
                "table has {} features, model expects {}",
                table.num_features(),
                self.num_features
            )));
        }
        self.predict_proba(table.values())
    }
}

fn check_inputs(table: &PixelTable, num_classes: usize, hyper: &Hyperparams) -> Result<()> {
    hyper.validate()?;
    if num_classes < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if num_classes > 255 {
        return Err(Error::Argument(format!(
            "at most 255 classes, got {num_classes}"
        )));
    }
    if table.is_empty() {
        return Err(Error::Argument("training table has no rows".into()));
    }
    if let Some(pos) = table
        .labels()
        .iter()
        .position(|&l| l as usize >= num_classes)
    {
        return Err(Error::Data(format!(
            "row {pos} has label {} but num_classes is {num_classes}",
            table.labels()[pos]
        )));
    }
    Ok(())
}

fn mean_loss(margins: &[f64], labels: &[u8], k: usize) -> f64 {
    let total: f64 = margins
        .chunks(k)
        .zip(labels)
        .map(|(m, &y)| objective::log_loss(m, y as usize))
        .sum();
    total / labels.len() as f64
}

/// Trains and also reports the per-round training loss.
pub fn train_with_log(
    table: &PixelTable,
    num_classes: usize,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<TrainOutcome> {
    check_inputs(table, num_classes, hyper)?;
    let n = table.num_rows();
    let k = num_classes;
    let labels = table.labels();
    let binning = build_bins(table, hyper.max_bins)?;
    let binned = binning.bin_table(table);

    let mut margins = vec![0.0f64; n * k];
    let mut probs = vec![0.0f64; n * k];
    let mut grad = vec![0.0f64; n];
    let mut hess = vec![0.0f64; n];
    let mut trees = Vec::with_capacity(hyper.rounds * k);
    let mut round_losses = Vec::with_capacity(hyper.rounds);

    for _ in 0..hyper.rounds {
        probs
            .par_chunks_mut(k)
            .zip(margins.par_chunks(k))
            .for_each(|(p, m)| objective::softmax_into(m, p));

        let mut updates = Vec::with_capacity(k);
        for class in 0..k {
            grad.par_iter_mut()
                .zip(hess.par_iter_mut())
                .enumerate()
                .for_each(|(i, (g, h))| {
                    let y = labels[i] as usize == class;
                    (*g, *h) = objective::grad_hess(probs[i * k + class], y, hyper.hessian_floor);
                });
            let (tree, leaf_of_row) = grow_tree(&binned, &binning, &grad, &hess, hyper);
            updates.push(leaf_of_row);
            trees.push(tree);
        }

        let round_trees = &trees[trees.len() - k..];
        margins.par_chunks_mut(k).enumerate().for_each(|(i, m)| {
            for class in 0..k {
                let leaf = updates[class][i] as usize;
                m[class] += hyper.learning_rate * round_trees[class].nodes[leaf].weight;
            }
        });
        round_losses.push(mean_loss(&margins, labels, k));
    }

    let model = BoostedEnsemble::from_parts(k, table.num_features(), trees, binning, *hyper, seed)?;
    Ok(TrainOutcome {
        model,
        round_losses,
    })
}

/// Fits a softmax-objective ensemble to `table`.
///
/// `seed` is recorded in the model; the procedure itself draws no random numbers.
pub fn train(
    table: &PixelTable,
    num_classes: usize,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<BoostedEnsemble> {
    train_with_log(table, num_classes, hyper, seed).map(|o| o.model)
}

/// Mean log-loss of `model` over `table`.
pub fn log_loss(model: &BoostedEnsemble, table: &PixelTable) -> Result<f64> {
    let probs = model.predict_table(table)?;
    let total: f64 = probs
        .iter()
        .zip(table.labels())
        .map(|(p, &y)| -p[y as usize].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / table.num_rows() as f64)
}
