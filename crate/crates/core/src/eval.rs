//! Dice scoring, cross-dataset mean-rank ordering, and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensorio::LabelMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassTally {
    /// `|P ∩ T|`
    pub intersection: u64,
    /// `|P|`
    pub predicted: u64,
    /// `|T|`
    pub truth: u64,
}

impl ClassTally {
    /// `2|P∩T| / (|P|+|T|)`, or `None` when the class is absent from both.
    pub fn dice(&self) -> Option<f64> {
        let denom = self.predicted + self.truth;
        (denom > 0).then(|| 2.0 * self.intersection as f64 / denom as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDice {
    pub class: String,
    pub dice: f64,
    /// Class absent from both prediction and truth over the whole set; scored 1.0.
    pub vacuous: bool,
    pub tally: ClassTally,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiceReport {
    pub dataset: String,
    pub model_set: Vec<String>,
    pub per_class: Vec<ClassDice>,
    pub mean_dice: f64,
}

impl DiceReport {
    pub fn with_labels(
        mut self,
        dataset: &str,
        model_set: &[String],
        class_names: &[String],
    ) -> Self {
        self.dataset = dataset.to_string();
        self.model_set = model_set.to_vec();
        for (c, name) in self.per_class.iter_mut().zip(class_names) {
            c.class = name.clone();
        }
        self
    }

    pub fn model_set_label(&self) -> String {
        self.model_set.join("+")
    }
}

/// Micro-aggregated confusion tallies, accumulated one mask pair at a time.
#[derive(Clone, Debug)]
pub struct DiceTally {
    ignore_value: u8,
    classes: Vec<ClassTally>,
}

impl DiceTally {
    pub fn new(num_classes: usize, ignore_value: u8) -> Self {
        Self {
            ignore_value,
            classes: vec![ClassTally::default(); num_classes],
        }
    }

    pub fn add(&mut self, pred: &LabelMask, truth: &LabelMask) -> Result<()> {
        if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
            return Err(Error::Shape(format!(
                "prediction is {}x{}, truth is {}x{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        let k = self.classes.len();
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            if t == self.ignore_value {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return Err(Error::Data(format!(
                    "label {} outside 0..{k}",
                    if p >= k { p } else { t }
                )));
            }
            self.classes[p].predicted += 1;
            self.classes[t].truth += 1;
            if p == t {
                self.classes[p].intersection += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DiceTally) {
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.intersection += b.intersection;
            a.predicted += b.predicted;
            a.truth += b.truth;
        }
    }

    pub fn tallies(&self) -> &[ClassTally] {
        &self.classes
    }

    pub fn report(&self) -> DiceReport {
        let per_class: Vec<ClassDice> = self
            .classes
            .iter()
            .enumerate()
            .map(|(c, tally)| ClassDice {
                class: c.to_string(),
                dice: tally.dice().unwrap_or(1.0),
                vacuous: tally.dice().is_none(),
                tally: *tally,
            })
            .collect();
        let mean_dice = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|c| c.dice).sum::<f64>() / per_class.len() as f64
        };
        DiceReport {
            dataset: String::new(),
            model_set: Vec::new(),
            per_class,
            mean_dice,
        }
    }
}

/// Per-class Dice over a whole test set, with tallies summed before dividing.
/// Pixels whose truth is `ignore_value` count nowhere.
pub fn dice_per_class(
    preds: &[LabelMask],
    truths: &[LabelMask],
    num_classes: usize,
    ignore_value: u8,
) -> Result<DiceReport> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            truths.len()
        )));
    }
    let mut tally = DiceTally::new(num_classes, ignore_value);
    for (p, t) in preds.iter().zip(truths) {
        tally.add(p, t)?;
    }
    Ok(tally.report())
}

/// Dataset x model score grid. Datasets keep insertion order; models are kept sorted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreMatrix {
    datasets: Vec<String>,
    models: BTreeSet<String>,
    cells: BTreeMap<(String, String), f64>,
}

impl ScoreMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dataset: &str, model: &str, score: f64) {
        if !self.datasets.iter().any(|d| d == dataset) {
            self.datasets.push(dataset.to_string());
        }
        self.models.insert(model.to_string());
        self.cells
            .insert((dataset.to_string(), model.to_string()), score);
    }

    pub fn get(&self, dataset: &str, model: &str) -> Option<f64> {
        self.cells
            .get(&(dataset.to_string(), model.to_string()))
            .copied()
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn models(&self) -> impl Iterator<Item = &String> {
        self.models.iter()
    }

    /// `(dataset, model)` pairs with no score.
    pub fn missing(&self) -> Vec<(String, String)> {
        self.datasets
            .iter()
            .flat_map(|d| self.models.iter().map(move |m| (d.clone(), m.clone())))
            .filter(|(d, m)| self.get(d, m).is_none())
            .collect()
    }

    /// Parses `dataset,model,score` rows (an optional header line starting with `dataset` is skipped).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("dataset")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [dataset, model, score] = fields[..] else {
                return Err(Error::Argument(format!(
                    "scores line {}: expected `dataset,model,score`, got {line:?}",
                    i + 1
                )));
            };
            let score: f64 = score.parse().map_err(|_| {
                Error::Argument(format!("scores line {}: bad score {score:?}", i + 1))
            })?;
            m.insert(dataset, model, score);
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankRow {
    pub model: String,
    /// Aligned with [`RankTable::datasets`].
    pub scores: Vec<f64>,
    pub ranks: Vec<f64>,
    pub mean_rank: f64,
    pub mean_score: f64,
    /// Another model has exactly the same mean rank; the order between them is by model id.
    pub tied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankTable {
    pub datasets: Vec<String>,
    /// Ascending mean rank, then model id.
    pub rows: Vec<RankRow>,
}

impl RankTable {
    pub fn row(&self, model: &str) -> Option<&RankRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn order(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.model.as_str()).collect()
    }
}

/// Ranks `scores` (descending, 1-based) within each dataset, sharing the average
/// positional rank among equal scores.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

/// Orders models by mean rank across datasets.
pub fn rank_models(scores: &ScoreMatrix) -> Result<RankTable> {
    if let Some((d, m)) = scores.missing().into_iter().next() {
        return Err(Error::Argument(format!(
            "no score for model `{m}` on dataset `{d}`"
        )));
    }
    if let Some(((d, m), v)) = scores.cells.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Argument(format!(
            "score {v} for `{m}` on `{d}` is not finite"
        )));
    }
    let models: Vec<&String> = scores.models.iter().collect();
    let datasets = scores.datasets.clone();
    let mut rows: Vec<RankRow> = models
        .iter()
        .map(|m| RankRow {
            model: m.to_string(),
            scores: Vec::with_capacity(datasets.len()),
            ranks: Vec::with_capacity(datasets.len()),
            mean_rank: 0.0,
            mean_score: 0.0,
            tied: false,
        })
        .collect();
    for d in &datasets {
        let column: Vec<f64> = models.iter().map(|m| scores.get(d, m).unwrap()).collect();
        for ((row, s), r) in rows.iter_mut().zip(&column).zip(average_ranks(&column)) {
            row.scores.push(*s);
            row.ranks.push(r);
        }
    }
    let n = datasets.len().max(1) as f64;
    for row in &mut rows {
        row.mean_rank = row.ranks.iter().sum::<f64>() / n;
        row.mean_score = row.scores.iter().sum::<f64>() / n;
    }
    let mean_ranks: Vec<f64> = rows.iter().map(|r| r.mean_rank).collect();
    for row in &mut rows {
        row.tied = mean_ranks.iter().filter(|&&m| m == row.mean_rank).count() > 1;
    }
    rows.sort_by(|a, b| {
        a.mean_rank
            .total_cmp(&b.mean_rank)
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(RankTable { datasets, rows })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV body: `dataset,model_set,class,dice,vacuous`, one row per class plus a `mean` row.
pub fn dice_csv(reports: &[DiceReport]) -> String {
    let mut out = String::from("dataset,model_set,class,dice,vacuous\n");
    for r in reports {
        let (ds, ms) = (csv_field(&r.dataset), csv_field(&r.model_set_label()));
        for c in &r.per_class {
            let _ = writeln!(
                out,
                "{ds},{ms},{},{:.4},{}",
                csv_field(&c.class),
                c.dice,
                c.vacuous
            );
        }
        let _ = writeln!(out, "{ds},{ms},mean,{:.4},false", r.mean_dice);
    }
    out
}

pub fn rank_csv(ranks: &RankTable) -> String {
    let mut header = vec!["model".to_string()];
    header.extend(ranks.datasets.iter().map(|d| csv_field(d)));
    header.extend(
        ranks
            .datasets
            .iter()
            .map(|d| csv_field(&format!("{d}_rank"))),
    );
    header.extend(["mean_rank", "mean_score", "tied"].map(String::from));
    let mut out = header.join(",");
    out.push('\n');
    for r in &ranks.rows {
        let mut f = vec![csv_field(&r.model)];
        f.extend(r.scores.iter().map(|s| format!("{s:.4}")));
        f.extend(r.ranks.iter().map(|s| format!("{s:.2}")));
        f.push(format!("{:.2}", r.mean_rank));
        f.push(format!("{:.4}", r.mean_score));
        f.push(r.tied.to_string());
        out.push_str(&f.join(","));
        out.push('\n');
    }
    out
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Models as rows, datasets as columns; datasets with more than two classes are
/// expanded per class followed by their mean.
pub fn text_table(reports: &[DiceReport], ranks: Option<&RankTable>) -> String {
    if reports.is_empty() {
        let Some(ranks) = ranks else {
            return "(no results)\n".into();
        };
        let mut rows = vec![{
            let mut h = vec!["model".to_string()];
            h.extend(ranks.datasets.iter().cloned());
            h.extend(["mean rank".to_string(), String::new()]);
            h
        }];
        for r in &ranks.rows {
            let mut row = vec![r.model.clone()];
            row.extend(r.scores.iter().map(|s| format!("{s:.4}")));
            row.push(format!("{:.2}", r.mean_rank));
            row.push(if r.tied { "tied".into() } else { String::new() });
            rows.push(row);
        }
        return aligned(&rows);
    }

    let mut datasets: Vec<(String, Vec<String>)> = Vec::new();
    let mut model_sets: Vec<String> = Vec::new();
    for r in reports {
        if !datasets.iter().any(|(d, _)| *d == r.dataset) {
            let classes = if r.per_class.len() > 2 {
                r.per_class.iter().map(|c| c.class.clone()).collect()
            } else {
                Vec::new()
            };
            datasets.push((r.dataset.clone(), classes));
        }
        let label = r.model_set_label();
        if !model_sets.contains(&label) {
            model_sets.push(label);
        }
    }
    if let Some(ranks) = ranks {
        let position = |m: &String| {
            ranks
                .rows
                .iter()
                .position(|r| r.model == *m)
                .unwrap_or(usize::MAX)
        };
        model_sets.sort_by_key(|m| position(m));
    }

    let mut header = vec!["model".to_string()];
    for (d, classes) in &datasets {
        if classes.is_empty() {
            header.push(d.clone());
        } else {
            header.extend(classes.iter().map(|c| format!("{d}:{c}")));
            header.push(format!("{d}:mean"));
        }
    }
    if ranks.is_some() {
        header.extend(["mean rank".to_string(), String::new()]);
    }
    let mut rows = vec![header];
    for m in &model_sets {
        let mut row = vec![m.clone()];
        for (d, classes) in &datasets {
            let report = reports
                .iter()
                .find(|r| r.dataset == *d && r.model_set_label() == *m);
            let width = if classes.is_empty() { 0 } else { classes.len() };
            match report {
                Some(r) => {
                    if width > 0 {
                        row.extend(r.per_class.iter().map(|c| format!("{:.4}", c.dice)));
                    }
                    row.push(format!("{:.4}", r.mean_dice));
                }
                None => row.extend(std::iter::repeat_n("-".to_string(), width + 1)),
            }
        }
        if let Some(rank) = ranks.and_then(|t| t.row(m)) {
            row.push(format!("{:.2}", rank.mean_rank));
            row.push(if rank.tied {
                "tied".into()
            } else {
                String::new()
            });
        }
        rows.push(row);
    }
    aligned(&rows)
}

/// Paths written by [`emit_report`] for output stem `stem`.
pub fn report_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".csv"), with(".txt"), with("_ranks.csv"))
}

/// Writes `<stem>.csv` and `<stem>.txt`, plus `<stem>_ranks.csv` when ranks are given.
pub fn emit_report(
    reports: &[DiceReport],
    ranks: Option<&RankTable>,
    stem: impl AsRef<Path>,
) -> Result<()> {
    let (csv, txt, rank_path) = report_paths(stem.as_ref());
    fs::write(&csv, dice_csv(reports)).map_err(|e| Error::io(&csv, e))?;
    fs::write(&txt, text_table(reports, ranks)).map_err(|e| Error::io(&txt, e))?;
    if let Some(ranks) = ranks {
        fs::write(&rank_path, rank_csv(ranks)).map_err(|e| Error::io(&rank_path, e))?;
    }
    Ok(())
}
