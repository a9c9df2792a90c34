use proptest::prelude::*;

use spectro_explain::aggregate::{aggregate, derivative_profile, project, SelectionCounts};
use spectro_explain::limexp::Explanation;
use spectro_explain::spectro::{welch, FrequencyProfile, ProfileKind, StftParams};
use spectro_explain::synthgen::{split_interval, Split};
use spectro_explain::Grid;

fn explanation(rows: usize, cols: usize, mask: Vec<bool>) -> Explanation {
    Explanation {
        rows,
        cols,
        mask,
        target_class: 1,
        superpixel_weights: vec![1.0],
        intercept: 0.0,
        top_segments: vec![0],
        local_r2: 1.0,
        short_of_positive: false,
    }
}

fn masks(n: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), 6 * 5), 1..n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn train_and_validation_windows_never_overlap(
        w in 1usize..5_000,
        extra in 0usize..50_000,
        f in 0.05f64..0.95,
    ) {
        let len = 2 * w + extra + 2;
        let train = split_interval(len, w, f, Split::Train);
        let val = split_interval(len, w, f, Split::Validation);
        if let (Some((_, t_hi)), Some((v_lo, v_hi))) = (train, val) {
            // last training sample comes strictly before the first validation sample
            prop_assert!(t_hi + w - 1 < v_lo);
            prop_assert!(v_hi + w <= len);
        }
    }

    #[test]
    fn derivative_is_positively_homogeneous(
        values in prop::collection::vec(-1e3f64..1e3, 2..64),
        c in 0.0f64..100.0,
    ) {
        let p = FrequencyProfile::new(values.clone(), ProfileKind::LimeProjection, 1.0);
        let scaled = FrequencyProfile::new(values.iter().map(|v| c * v).collect(), ProfileKind::LimeProjection, 1.0);
        let d = derivative_profile(&p).unwrap();
        let ds = derivative_profile(&scaled).unwrap();
        prop_assert_eq!(d.bins(), values.len() - 1);
        for (a, b) in d.values.iter().zip(&ds.values) {
            prop_assert!(*a >= 0.0);
            prop_assert!((c * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn projection_ignores_column_order(
        data in prop::collection::vec(0.0f32..1.0, 6 * 5),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let g = Grid::from_vec(6, 5, data).unwrap();
        let shuffled = Grid::from_fn(6, 5, |r, c| g.get(r, perm[c]));
        let agg = |values| spectro_explain::aggregate::AggregatedExplanation { values, class_id: 0, n_explanations: 1 };
        let a = project(&agg(g), 1.0);
        let b = project(&agg(shuffled), 1.0);
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn aggregate_is_order_independent_and_in_unit_range(ms in masks(12)) {
        let es: Vec<Explanation> = ms.into_iter().map(|m| explanation(6, 5, m)).collect();
        let forward = aggregate(&es).unwrap();
        let mut rev = es.clone();
        rev.reverse();
        prop_assert_eq!(&forward, &aggregate(&rev).unwrap());
        prop_assert!(forward.values.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let any = es.iter().any(|e| e.mask.iter().any(|&b| b));
        prop_assert_eq!(forward.values.max() == 1.0, any);
    }

    #[test]
    fn merged_partial_counts_equal_one_pass(ms in masks(12), split in 0usize..12) {
        let es: Vec<Explanation> = ms.into_iter().map(|m| explanation(6, 5, m)).collect();
        let split = split.min(es.len());
        let mut left = SelectionCounts::new(6, 5, 1);
        let mut right = SelectionCounts::new(6, 5, 1);
        es[..split].iter().for_each(|e| left.add(e).unwrap());
        es[split..].iter().for_each(|e| right.add(e).unwrap());
        left.merge(&right).unwrap();
        prop_assert_eq!(left.normalize(), aggregate(&es).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn doubling_the_signal_quadruples_welch(seed in any::<u64>()) {
        let mut rng = spectro_explain::synthgen::rng_from_seed(seed);
        let x: Vec<f32> = (0..200_000).map(|_| rand::Rng::gen_range(&mut rng, -1.0f32..1.0)).collect();
        let x2: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
        let p = StftParams::default();
        let a = welch(&x, &p).unwrap();
        let b = welch(&x2, &p).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((4.0 * u - v).abs() <= 1e-9 * v.abs().max(1e-12));
        }
    }
}
