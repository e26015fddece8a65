//! Seeded end-to-end fixtures. Expected values were computed once with the
//! seeds below and frozen; AUROCs are exact pair-count ratios, so any drift
//! signals a behavioural change rather than rounding.

use oodscore_core::data::{extract_features, synth_generate, OodMode, RawDataset, SynthConfig};
use oodscore_core::descriptor::{lookup_list, RegistryOptions};
use oodscore_core::eval::{evaluate_suite, SampleSet, SuiteInputs, SuiteOptions};
use oodscore_core::grad::{train_mlp, TrainConfig};
use oodscore_core::rng::{stream, Purpose};
use rand::RngExt;
use rand_distr::StandardNormal;

const FROZEN_BLOB_ACCURACY: f64 = 0.995;
const FROZEN_FAR_SHIFT_MSP: f64 = 0.046625;

/// Two unit-variance blobs centred at (-3, 0) and (3, 0), 100 points each.
fn separable_blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = stream(seed, Purpose::Data);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (label, cx) in [(0, -3.0), (1, 3.0)] {
        for _ in 0..100 {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            xs.push(vec![cx + dx, dy]);
            ys.push(label);
        }
    }
    (xs, ys)
}

#[test]
fn separable_blobs_train_past_accuracy_floor() {
    let (xs, ys) = separable_blobs(7);
    let out = train_mlp(&xs, &ys, &TrainConfig::new(vec![2, 16, 2])).unwrap();
    assert!(out.train_accuracy >= 0.95, "accuracy {}", out.train_accuracy);
    assert_eq!(out.train_accuracy, FROZEN_BLOB_ACCURACY);
}

fn two_clusters(delta: f64) -> SynthConfig {
    SynthConfig {
        input_dim: 2,
        class_count: 2,
        train_per_class: 100,
        eval_per_class: 100,
        cluster_std: 1.0,
        ood: OodMode::MeanShift { delta },
        seed: 7,
        ..SynthConfig::default()
    }
}

// A twenty-sigma translation lands every OOD point deep in a saturated
// region of the classifier, so MSP ranks the shifted set as *more* confident
// than ID data. The value is frozen as observed.
#[test]
fn far_mean_shift_saturates_msp() {
    let data = synth_generate(&two_clusters(20.0)).unwrap();
    let (xs, ys) = data.train.labelled();
    let model = train_mlp(&xs, &ys, &TrainConfig::new(vec![2, 16, 2])).unwrap().model;
    let id = SampleSet::from_dump(&extract_features(&model, &data.id_eval, "id").unwrap()).unwrap();
    let ood = SampleSet::from_dump(&extract_features(&model, &data.ood_eval, "ood").unwrap()).unwrap();
    let descriptors = lookup_list("msp", &RegistryOptions::default()).unwrap();
    let inputs = SuiteInputs { id: &id, ood: &ood, model: None, anchors: None };
    let report = evaluate_suite(&descriptors, &inputs, &SuiteOptions::default()).unwrap();
    assert_eq!(report.entries[0].auroc, FROZEN_FAR_SHIFT_MSP);
}

#[test]
fn zero_shift_leaves_ood_distributed_like_id() {
    let data = synth_generate(&two_clusters(0.0)).unwrap();
    let mean = |set: &RawDataset| {
        let xs = set.inputs();
        (0..2).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64).collect::<Vec<_>>()
    };
    let (a, b) = (mean(&data.id_eval), mean(&data.ood_eval));
    for j in 0..2 {
        // 200 unit-variance draws per set: means agree within a few standard errors
        assert!((a[j] - b[j]).abs() < 0.4, "coordinate {j}: {} vs {}", a[j], b[j]);
    }
}
