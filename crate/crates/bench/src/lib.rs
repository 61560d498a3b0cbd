//! Fixtures shared by the benchmarks.

use har_core::datasets::{synth_generate, SynthConfig};
use har_core::eval::train_source;
use har_core::rng::seeded;
use har_core::{Dataset, NetworkConfig, Tensor, TrainedModel};
use rand::Rng;

/// Uniform `[-1, 1)` tensor of the given shape.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// The default synthetic dataset.
pub fn synthetic() -> Dataset {
    synth_generate(&SynthConfig::default()).unwrap()
}

/// Default network for `data` with a fitted discretizer and no training.
pub fn untrained(data: &Dataset) -> (NetworkConfig, TrainedModel) {
    let mut config = NetworkConfig::new(data.num_channels(), data.window(), data.labels.len());
    config.epochs = 0;
    let model = train_source(&config, data, &data.segments).unwrap().0;
    (config, model)
}
