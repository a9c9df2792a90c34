//! Properties that need a trained reference network on desk-scale data.

use std::sync::OnceLock;

use spectro_explain::formats::encode_checkpoint;
use spectro_explain::limexp::{explain, LimeParams};
use spectro_explain::model::{train, Classifier, Cnn, TrainConfig, TrainedModel};
use spectro_explain::pipeline::{golden_sample, CALIBRATION_CLASS};
use spectro_explain::quickseg::{quickshift, QuickshiftParams};
use spectro_explain::synthgen::{rng_from_seed, DatasetManifest, DeviceSpec, Split};
use spectro_explain::{Dataset, Grid};

fn desk() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| Dataset::synthesize(DatasetManifest::desk_scale(0), 200_000, Default::default()).unwrap())
}

/// Two epochs are enough for the desk-scale classes to separate.
fn short_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 2, seed, ..Default::default() }
}

fn trained(seed: u64) -> &'static TrainedModel {
    static MODELS: [OnceLock<TrainedModel>; 2] = [OnceLock::new(), OnceLock::new()];
    MODELS[seed as usize].get_or_init(|| train(desk(), &short_config(seed)).unwrap())
}

fn golden(class_id: u32) -> Grid {
    desk().canvas(&golden_sample(desk(), class_id).unwrap()).unwrap()
}

#[test]
fn seeds_give_different_weights_and_both_learn() {
    let (a, b) = (trained(0), trained(1));
    assert_ne!(encode_checkpoint(&a.model), encode_checkpoint(&b.model));
    for m in [a, b] {
        assert!(m.report.final_val_accuracy >= 0.95, "{:?}", m.report.val_accuracy);
        // near-diagonal confusion
        let total: u64 = m.report.confusion.iter().flatten().sum();
        let diag: u64 = (0..m.report.n_classes).map(|i| m.report.confusion[i][i]).sum();
        assert!(diag as f64 >= 0.95 * total as f64);
    }
}

#[test]
fn training_is_reproducible_per_seed() {
    let cfg = TrainConfig { epochs: 1, train_set_size: 32, val_set_size: 18, seed: 9, ..Default::default() };
    let a = train(desk(), &cfg).unwrap();
    let b = train(desk(), &cfg).unwrap();
    assert_eq!(encode_checkpoint(&a.model), encode_checkpoint(&b.model));
    assert_eq!(a.report, b.report);
}

#[test]
fn held_out_windows_are_classified() {
    let model = &trained(0).model;
    let mut rng = rng_from_seed(404);
    let mut hits = 0;
    let n = 90;
    for i in 0..n {
        let class_id = (i % 9) as u32;
        let w = desk().draw_for_class(class_id, Split::Validation, &mut rng).unwrap();
        let p = &model.predict_proba(&[desk().canvas(&w).unwrap()]).unwrap()[0];
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        hits += usize::from(best == class_id as usize);
    }
    assert!(hits as f64 >= 0.95 * n as f64, "{hits}/{n}");
}

#[test]
fn batching_does_not_change_outputs() {
    let model = &trained(0).model;
    let (a, b) = (golden(2), golden(5));
    let both = model.predict_proba(&[a.clone(), b.clone()]).unwrap();
    let one = model.predict_proba(&[a]).unwrap();
    let two = model.predict_proba(&[b]).unwrap();
    for (x, y) in both[0].iter().zip(&one[0]).chain(both[1].iter().zip(&two[0])) {
        assert!((x - y).abs() <= 1e-5);
    }
    for p in &both {
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
        assert!(p.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn replicated_planes_match_a_single_plane() {
    // a network fed three copies of the canvas equals a one-plane network
    // whose first-layer weights are the sums over planes
    let one = Cnn::<f64>::init(spectro_explain::model::Architecture::reference(9), 4).unwrap();
    let mut arch3 = one.architecture().clone();
    arch3.input_planes = 3;
    let three = Cnn::<f64>::init(arch3.clone(), 4).unwrap();
    let shape = &arch3.tensor_shapes()[0].1; // conv1.weight: [cout, cin, kh, kw]
    let (couts, k) = (shape[0], shape[2] * shape[3]);
    let mut folded = one.params().to_vec();
    for o in 0..couts {
        for t in 0..k {
            folded[o * k + t] = (0..3).map(|p| three.params()[(o * 3 + p) * k + t]).sum();
        }
    }
    let w1 = couts * k;
    let w3 = couts * 3 * k;
    folded[w1..].copy_from_slice(&three.params()[w3..]);
    let folded = Cnn::from_params(one.architecture().clone(), folded).unwrap();

    let g = golden(4);
    let x3 = three.adapt_input(&g).unwrap();
    assert_eq!(x3.len(), 3 * 224 * 224);
    assert_eq!(x3[..224 * 224], x3[224 * 224..2 * 224 * 224]);
    let p3 = three.forward(&x3).unwrap().logits;
    let p1 = folded.forward(&folded.adapt_input(&g).unwrap()).unwrap().logits;
    for (a, b) in p3.iter().zip(&p1) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn more_lime_samples_do_not_hurt_the_fit() {
    let model = &trained(0).model;
    let g = golden(CALIBRATION_CLASS);
    let seg = quickshift(&g, &QuickshiftParams::default()).unwrap();
    let r2 = |n_samples: usize| {
        let params = LimeParams { n_samples, ..Default::default() };
        explain(&g, &seg, model, CALIBRATION_CLASS, &params, &mut rng_from_seed(21)).unwrap().local_r2
    };
    let (small, large) = (r2(200), r2(2000));
    assert!(large >= small - 0.05, "r2 with 2000 samples {large}, with 200 {small}");
}

#[test]
fn color_multiplier_times_ten_never_merges_segments() {
    let g = golden(CALIBRATION_CLASS);
    let base = QuickshiftParams::default();
    let mut last = 0;
    for scale in [0.1, 1.0, 10.0, 100.0] {
        let p = QuickshiftParams { color_multiplier: base.color_multiplier * scale, ..base };
        let n = quickshift(&g, &p).unwrap().n_segments();
        assert!(n >= last, "x{scale}: {n} < {last}");
        last = n;
    }
}

#[test]
fn single_class_training_is_flagged_degenerate() {
    let spec = DeviceSpec { n_samples: 600_000, noise_floor_sigma: 0.1, ..DeviceSpec::silent(0) };
    let manifest = DatasetManifest { classes: vec![spec], ..DatasetManifest::desk_scale(0) };
    let ds = Dataset::synthesize(manifest, 200_000, Default::default()).unwrap();
    let cfg = TrainConfig { epochs: 1, train_set_size: 4, val_set_size: 4, batch_size: 4, ..Default::default() };
    let out = train(&ds, &cfg).unwrap();
    assert!(out.report.degenerate);
    assert_eq!(out.report.final_val_accuracy, 1.0);
}
