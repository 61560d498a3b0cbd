//! End-to-end training behavior of the network.

use har_core::datasets::{synth_generate, SynthConfig};
use har_core::eval::evaluate;
use har_core::model::{build_network, train};
use har_core::rng::seeded;
use har_core::{ActivityLabel, NetworkConfig, SegmentTensor, Tensor, TrainedModel};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn labels(m: usize) -> Vec<ActivityLabel> {
    (0..m).map(|i| ActivityLabel::new(i, format!("c{i}"))).collect()
}

/// `per_class` windows per class; class `m` sits at level `2m` with small
/// noise, so a single feature separates the classes.
fn separable_set(m: usize, per_class: usize, window: usize, seed: u64) -> Vec<SegmentTensor> {
    let labels = labels(m);
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut out = Vec::new();
    for (c, label) in labels.iter().enumerate() {
        for k in 0..per_class {
            let values = (0..3 * window)
                .map(|_| 2.0 * c as f64 + noise.sample(&mut rng))
                .collect();
            out.push(SegmentTensor {
                channels: Tensor::new(&[3, window], values).unwrap(),
                label: label.clone(),
                subject_id: "s".into(),
                origin_index: (c * per_class + k) * window,
            });
        }
    }
    out
}

fn fresh_model(config: &NetworkConfig, segments: &[SegmentTensor]) -> TrainedModel {
    let mut model = build_network(config, &mut seeded(config.seed)).unwrap();
    model.set_labels(labels(config.classes)).unwrap();
    model.fit_discretizer(segments).unwrap();
    model
}

#[test]
fn overfits_a_small_separable_set() {
    let segments = separable_set(4, 10, 32, 1);
    let mut config = NetworkConfig::new(3, 32, 4);
    config.epochs = 30;
    let model = fresh_model(&config, &segments);
    let (trained, history) = train(&model, &segments, &config.train_options()).unwrap();
    let last = *history.epoch_losses.last().unwrap();
    assert_eq!(history.epoch_losses.len(), 30);
    assert!(last < 0.1 * 4f64.ln(), "final epoch loss {last}");
    assert_eq!(evaluate(&trained, &segments).unwrap().accuracy, 1.0);
}

#[test]
fn first_loss_is_log_m_with_zero_classifier() {
    let segments = separable_set(6, 3, 24, 2);
    let mut config = NetworkConfig::new(3, 24, 6);
    config.epochs = 1;
    let model = fresh_model(&config, &segments);
    let (_, history) = train(&model, &segments, &config.train_options()).unwrap();
    let first = history.initial_loss.unwrap();
    assert!((first - 6f64.ln()).abs() < 1e-6, "first loss {first}");
}

#[test]
fn zero_epochs_is_a_no_op() {
    let segments = separable_set(3, 2, 16, 3);
    let mut config = NetworkConfig::new(3, 16, 3);
    config.epochs = 0;
    let model = fresh_model(&config, &segments);
    let (trained, history) = train(&model, &segments, &config.train_options()).unwrap();
    assert_eq!(trained, model);
    assert!(history.epoch_losses.is_empty());
    assert!(history.initial_loss.is_none());
}

#[test]
fn missing_class_is_reported() {
    let mut segments = separable_set(3, 2, 16, 4);
    segments.retain(|s| s.label.index != 1);
    let config = NetworkConfig::new(3, 16, 3);
    let model = fresh_model(&config, &segments);
    let err = train(&model, &segments, &config.train_options()).unwrap_err();
    assert!(err.to_string().contains("c1"), "{err}");
}

#[test]
fn training_ignores_input_order() {
    let segments = separable_set(3, 4, 16, 5);
    let mut config = NetworkConfig::new(3, 16, 3);
    config.epochs = 3;
    let model = fresh_model(&config, &segments);
    let probe = &segments[5];

    let mut swapped = segments.clone();
    swapped.swap(0, 11);
    swapped.swap(2, 7);
    let (a, _) = train(&model, &segments, &config.train_options()).unwrap();
    let (b, _) = train(&model, &swapped, &config.train_options()).unwrap();
    assert_eq!(a.scores(probe).unwrap(), b.scores(probe).unwrap());
    assert_eq!(a.parameters, b.parameters);
}

#[test]
fn eval_mode_is_deterministic() {
    let segments = separable_set(3, 2, 16, 6);
    let config = NetworkConfig::new(3, 16, 3);
    let mut model = fresh_model(&config, &segments);
    let mut rng = seeded(11);
    for p in &mut model.parameters {
        for v in p.tensor.values_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let s = &segments[0];
    assert_eq!(model.scores(s).unwrap(), model.scores(s).unwrap());
    let zeroed = fresh_model(&config, &segments);
    assert!(zeroed.scores(s).unwrap().values().iter().all(|&v| v == 0.0));
}

#[test]
fn shared_bias_shift_keeps_predictions() {
    let segments = separable_set(4, 3, 16, 7);
    let mut config = NetworkConfig::new(3, 16, 4);
    config.epochs = 5;
    let model = fresh_model(&config, &segments);
    let (trained, _) = train(&model, &segments, &config.train_options()).unwrap();
    let mut shifted = trained.clone();
    for v in shifted
        .parameter_mut("classifier.bias")
        .unwrap()
        .tensor
        .values_mut()
    {
        *v += 3.25;
    }
    for s in &segments {
        assert_eq!(
            trained.predict_index(s).unwrap(),
            shifted.predict_index(s).unwrap()
        );
    }
}

/// Trained and scored on the same subject's windows: every subject's
/// activities must be separable by the network.
#[test]
fn synthetic_classes_are_separable_within_a_subject() {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let config = NetworkConfig::new(data.num_channels(), data.window(), data.labels.len());
    for subject in &data.subjects {
        let own = data.subject_segments(subject);
        let mut model = build_network(&config, &mut seeded(0)).unwrap();
        model.set_labels(data.labels.clone()).unwrap();
        model.fit_discretizer(&own).unwrap();
        let (trained, _) = train(&model, &own, &config.train_options()).unwrap();
        let acc = evaluate(&trained, &own).unwrap().accuracy;
        assert!(acc >= 0.95, "{subject}: accuracy {acc}");
    }
}
