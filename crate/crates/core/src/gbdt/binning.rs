use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::PixelTable;

pub const MAX_BINS: usize = 256;

/// Frozen per-feature bin boundaries.
///
/// A value `x` falls in bin `b` = number of boundaries `<= x`, so a feature with
/// `n` boundaries has `n + 1` bins and bin `t` lies left of boundary `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinningScheme {
    boundaries: Vec<Vec<f32>>,
}

impl BinningScheme {
    pub fn from_boundaries(boundaries: Vec<Vec<f32>>) -> Result<Self> {
        for (f, b) in boundaries.iter().enumerate() {
            if b.len() >= MAX_BINS {
                return Err(Error::Format(format!(
                    "feature {f} has {} boundaries, at most {} allowed",
                    b.len(),
                    MAX_BINS - 1
                )));
            }
            if b.iter().any(|v| !v.is_finite()) || b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!(
                    "feature {f} boundaries are not strictly increasing finite values"
                )));
            }
        }
        Ok(Self { boundaries })
    }

    pub fn num_features(&self) -> usize {
        self.boundaries.len()
    }

    pub fn boundaries(&self, feature: usize) -> &[f32] {
        &self.boundaries[feature]
    }

    pub fn num_bins(&self, feature: usize) -> usize {
        self.boundaries[feature].len() + 1
    }

    #[inline]
    pub fn bin(&self, feature: usize, value: f32) -> u8 {
        self.boundaries[feature].partition_point(|&b| b <= value) as u8
    }

    /// Column-major bin indices for every row of `table`.
    pub fn bin_table(&self, table: &PixelTable) -> BinnedMatrix {
        let columns = (0..self.num_features())
            .into_par_iter()
            .map(|f| table.column(f).map(|v| self.bin(f, v)).collect())
            .collect();
        BinnedMatrix {
            num_rows: table.num_rows(),
            columns,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BinnedMatrix {
    pub num_rows: usize,
    pub columns: Vec<Vec<u8>>,
}

fn midpoint(lo: f32, hi: f32) -> f32 {
    let m = ((lo as f64 + hi as f64) * 0.5) as f32;
    // adjacent floats can round the midpoint onto `lo`, which would put `lo` in the upper bin
    if m > lo {
        m
    } else {
        hi
    }
}

fn feature_boundaries(mut values: Vec<f32>, max_bins: usize) -> Vec<f32> {
    values.sort_unstable_by(f32::total_cmp);
    let mut distinct = values.clone();
    distinct.dedup();
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = values.len();
    let min = values[0];
    let mut out: Vec<f32> = Vec::with_capacity(max_bins - 1);
    for q in 1..max_bins {
        let b = values[q * n / max_bins];
        if b > min && out.last().is_none_or(|&last| b > last) {
            out.push(b);
        }
    }
    out
}

/// Quantile boundaries per feature of `table`, at most `max_bins` bins each.
///
/// Features with no more than `max_bins` distinct values get a boundary at each
/// midpoint between consecutive distinct values; otherwise boundaries sit at the
/// sorted values with ranks `q * n / max_bins`, `q = 1..max_bins`, deduplicated.
pub fn build_bins(table: &PixelTable, max_bins: usize) -> Result<BinningScheme> {
    if table.is_empty() {
        return Err(Error::Argument("cannot bin an empty table".into()));
    }
    if !(2..=MAX_BINS).contains(&max_bins) {
        return Err(Error::Argument(format!(
            "max_bins must be in 2..={MAX_BINS}, got {max_bins}"
        )));
    }
    let boundaries = (0..table.num_features())
        .into_par_iter()
        .map(|f| feature_boundaries(table.column(f).collect(), max_bins))
        .collect();
    Ok(BinningScheme { boundaries })
}
