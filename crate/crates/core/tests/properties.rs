mod common;

use atseg_core::eval::{self, ScoreMatrix};
use atseg_core::features::{concat_models, upsample_bilinear};
use atseg_core::gbdt::{self, build_bins, objective};
use atseg_core::tensorio::{self, FeatureMap, LabelMask, Tensor};
use atseg_core::{Hyperparams, PixelTable};
use proptest::prelude::*;

fn feature_map(max_side: usize, max_c: usize) -> impl Strategy<Value = FeatureMap> {
    (1..=max_side, 1..=max_side, 1..=max_c).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(-1e3f32..1e3, h * w * c)
            .prop_map(move |data| FeatureMap::new(h, w, c, data).unwrap())
    })
}

fn mask_pair(k: u8) -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1usize..10, 1usize..10).prop_flat_map(move |(h, w)| {
        (
            prop::collection::vec(0..k, h * w),
            prop::collection::vec(0..k, h * w),
        )
            .prop_map(move |(a, b)| {
                (
                    LabelMask::new(h, w, a).unwrap(),
                    LabelMask::new(h, w, b).unwrap(),
                )
            })
    })
}

fn small_table() -> impl Strategy<Value = (PixelTable, usize)> {
    (1usize..4, 2usize..4, 2usize..80).prop_flat_map(|(nf, k, n)| {
        (
            prop::collection::vec(-5.0f32..5.0, n * nf),
            prop::collection::vec(0..k as u8, n),
        )
            .prop_map(move |(v, l)| (PixelTable::from_matrix(nf, v, l).unwrap(), k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_round_trip(f in feature_map(12, 5), m in mask_pair(255)) {
        let ft = Tensor::Features(f);
        prop_assert_eq!(tensorio::decode(&tensorio::encode(&ft)).unwrap(), ft);
        let mt = Tensor::Mask(m.0);
        prop_assert_eq!(tensorio::decode(&tensorio::encode(&mt)).unwrap(), mt);
    }

    #[test]
    fn npy_header_is_aligned(f in feature_map(6, 3)) {
        let bytes = tensorio::encode(&Tensor::Features(f));
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        prop_assert_eq!((10 + header_len) % 64, 0);
        prop_assert_eq!(bytes[10 + header_len - 1], b'\n');
    }

    #[test]
    fn bilinear_is_linear(a in feature_map(6, 2), oh in 1usize..20, ow in 1usize..20, s in -3.0f32..3.0) {
        let scaled = FeatureMap::new(a.height(), a.width(), a.channels(), a.data().iter().map(|v| v * s).collect()).unwrap();
        let up_a = upsample_bilinear(&a, oh, ow).unwrap();
        let up_s = upsample_bilinear(&scaled, oh, ow).unwrap();
        for (x, y) in up_a.data().iter().zip(up_s.data()) {
            prop_assert!((x * s - y).abs() <= 1e-3 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn bilinear_stays_in_range(a in feature_map(8, 3), oh in 1usize..40, ow in 1usize..40) {
        let up = upsample_bilinear(&a, oh, ow).unwrap();
        let c = a.channels();
        for ch in 0..c {
            let col = || a.data().iter().skip(ch).step_by(c).copied();
            let (lo, hi) = (col().fold(f32::MAX, f32::min), col().fold(f32::MIN, f32::max));
            prop_assert!(up.data().iter().skip(ch).step_by(c).all(|&v| lo <= v && v <= hi));
        }
    }

    #[test]
    fn concat_slices_back_to_inputs(a in feature_map(5, 3), cb in 1usize..4) {
        let (h, w) = (a.height(), a.width());
        let b = FeatureMap::new(h, w, cb, (0..h * w * cb).map(|i| i as f32).collect()).unwrap();
        let cat = concat_models(&[a.clone(), b.clone()], h, w).unwrap();
        prop_assert_eq!(cat.channels(), a.channels() + cb);
        for y in 0..h {
            for x in 0..w {
                let px = cat.pixel(y, x);
                prop_assert_eq!(&px[..a.channels()], a.pixel(y, x));
                prop_assert_eq!(&px[a.channels()..], b.pixel(y, x));
            }
        }
    }

    #[test]
    fn dice_symmetric_and_bounded((p, t) in mask_pair(4)) {
        let ab = eval::dice_per_class(std::slice::from_ref(&p), std::slice::from_ref(&t), 4, 255).unwrap();
        let ba = eval::dice_per_class(&[t], &[p], 4, 255).unwrap();
        for (x, y) in ab.per_class.iter().zip(&ba.per_class) {
            prop_assert_eq!(x.dice, y.dice);
            prop_assert!((0.0..=1.0).contains(&x.dice));
        }
    }

    #[test]
    fn softmax_sums_to_one(m in prop::collection::vec(-50.0f64..50.0, 2..10)) {
        let p = objective::softmax(&m);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ranks_average_to_midpoint(scores in prop::collection::vec(prop::collection::vec(0u8..5, 2..7), 1..4)) {
        // every dataset scores the same model count; small integer scores force ties
        let n = scores[0].len();
        let mut m = ScoreMatrix::new();
        for (d, row) in scores.iter().enumerate() {
            for i in 0..n {
                m.insert(&format!("d{d}"), &format!("m{i}"), row.get(i).copied().unwrap_or(0) as f64);
            }
        }
        let table = eval::rank_models(&m).unwrap();
        let mean: f64 = table.rows.iter().map(|r| r.mean_rank).sum::<f64>() / n as f64;
        prop_assert!((mean - (n as f64 + 1.0) / 2.0).abs() < 1e-9);
        for w in table.rows.windows(2) {
            prop_assert!(w[0].mean_rank < w[1].mean_rank || (w[0].mean_rank == w[1].mean_rank && w[0].model < w[1].model));
        }
    }

    #[test]
    fn ranks_ignore_insertion_order(scores in prop::collection::vec(0.0f64..1.0, 3..8), rot in 0usize..8) {
        let n = scores.len();
        let mut a = ScoreMatrix::new();
        let mut b = ScoreMatrix::new();
        for i in 0..n {
            a.insert("d", &format!("m{i}"), scores[i]);
            let j = (i + rot) % n;
            b.insert("d", &format!("m{j}"), scores[j]);
        }
        prop_assert_eq!(eval::rank_models(&a).unwrap(), eval::rank_models(&b).unwrap());
    }

    #[test]
    fn bins_respect_order_and_cap((t, _) in small_table(), max_bins in 2usize..12) {
        let scheme = build_bins(&t, max_bins).unwrap();
        for f in 0..t.num_features() {
            prop_assert!(scheme.num_bins(f) <= max_bins);
            let bounds = scheme.boundaries(f);
            prop_assert!(bounds.windows(2).all(|w| w[0] < w[1]));
            let mut col: Vec<f32> = t.column(f).collect();
            col.sort_by(f32::total_cmp);
            for w in col.windows(2) {
                prop_assert!(scheme.bin(f, w[0]) <= scheme.bin(f, w[1]));
            }
            // bin index is the count of boundaries at or below the value
            for &v in &col {
                prop_assert_eq!(scheme.bin(f, v) as usize, bounds.iter().filter(|&&b| b <= v).count());
            }
        }
    }

    #[test]
    fn rows_in_the_same_bins_predict_alike((t, k) in small_table()) {
        let hyper = Hyperparams { rounds: 3, max_depth: 3, ..Default::default() };
        let model = gbdt::train(&t, k, &hyper, 0).unwrap();
        let scheme = model.binning();
        for i in 0..t.num_rows() {
            // move every feature to the lowest value of its bin
            let shifted: Vec<f32> = (0..t.num_features())
                .map(|f| {
                    let b = scheme.bin(f, t.row(i)[f]) as usize;
                    if b == 0 { -1e30 } else { scheme.boundaries(f)[b - 1] }
                })
                .collect();
            prop_assert_eq!(model.predict_margins_row(t.row(i)), model.predict_margins_row(&shifted));
        }
    }

    #[test]
    fn probabilities_are_distributions((t, k) in small_table()) {
        let model = gbdt::train(&t, k, &Hyperparams { rounds: 4, ..Default::default() }, 0).unwrap();
        for p in model.predict_table(&t).unwrap() {
            prop_assert_eq!(p.len(), k);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn model_save_load_preserves_predictions() {
    let mut rng = atseg_core::rng::SeededRng::new(9);
    let (n, nf) = (1000, 5);
    let values: Vec<f32> = (0..n * nf)
        .map(|_| rng.unit_f64() as f32 * 4.0 - 2.0)
        .collect();
    let labels: Vec<u8> = (0..n)
        .map(|i| ((values[i * nf] > 0.0) as u8) + ((values[i * nf + 1] > 0.5) as u8))
        .collect();
    let table = PixelTable::from_matrix(nf, values, labels).unwrap();
    let model = gbdt::train(
        &table,
        3,
        &Hyperparams {
            rounds: 15,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.atsg");
    gbdt::save_model(&model, &path).unwrap();
    let back = gbdt::load_model(&path).unwrap();
    assert_eq!(back.seed(), 5);
    assert_eq!(back.hyper(), model.hyper());
    for i in 0..n {
        assert_eq!(
            model.predict_margins_row(table.row(i)),
            back.predict_margins_row(table.row(i))
        );
    }
    assert_eq!(gbdt::model_to_bytes(&back), gbdt::model_to_bytes(&model));
}

#[test]
fn quantile_boundaries_match_sorted_ranks() {
    let n = 1000;
    let values: Vec<f32> = (0..n).map(|i| ((i * 7919) % n) as f32).collect();
    let table = PixelTable::from_matrix(1, values.clone(), vec![0; n]).unwrap();
    let scheme = build_bins(&table, 8).unwrap();
    let mut sorted = values;
    sorted.sort_by(f32::total_cmp);
    let expected: Vec<f32> = (1..8).map(|q| sorted[q * n / 8]).collect();
    assert_eq!(scheme.boundaries(0), expected.as_slice());
}

#[test]
fn training_is_thread_count_independent() {
    let set = common::scene_set(
        &atseg_core::SynthSpec {
            seed: 12,
            ..Default::default()
        },
        3,
        0,
        true,
    );
    let ms = common::models(&["synthA", "synthB"]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let table = common::train_table(&set, &ms, 1);
                let model = gbdt::train(
                    &table,
                    4,
                    &Hyperparams {
                        rounds: 8,
                        ..Default::default()
                    },
                    1,
                )
                .unwrap();
                (table, gbdt::model_to_bytes(&model))
            })
    };
    let (t1, m1) = run(1);
    let (t8, m8) = run(8);
    assert_eq!(t1, t8);
    assert_eq!(m1, m8);
}
