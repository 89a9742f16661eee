//! Workloads shared by the criterion benches.

use atseg_core::rng::{NormalStream, SeededRng};
use atseg_core::{FeatureMap, PixelTable};

/// `n` rows, `nf` Gaussian features, `k` classes; feature `f` is shifted for class `f % k`.
pub fn gaussian_table(n: usize, nf: usize, k: usize, seed: u64) -> PixelTable {
    let mut rng = SeededRng::new(seed);
    let mut noise = NormalStream::new(seed.wrapping_add(1));
    let mut values = Vec::with_capacity(n * nf);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.below(k as u64) as usize;
        for f in 0..nf {
            let shift = if f % k == y { 1.0 } else { 0.0 };
            values.push((shift + noise.sample()) as f32);
        }
        labels.push(y as u8);
    }
    PixelTable::from_matrix(nf, values, labels).expect("consistent table")
}

/// A token-grid sized map, e.g. 14x14x12 for a ViT-B/16 at 224 px.
pub fn attention_map(side: usize, heads: usize, seed: u64) -> FeatureMap {
    let mut rng = SeededRng::new(seed);
    let data = (0..side * side * heads)
        .map(|_| rng.unit_f64() as f32)
        .collect();
    FeatureMap::new(side, side, heads, data).expect("consistent map")
}
