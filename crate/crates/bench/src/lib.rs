//! Shared fixtures for the benchmarks in `benches/`.

use q2p_core::sampler::{generate_dataset, Dataset};
use q2p_core::synthetic::{self, SyntheticConfig};
use q2p_core::train::init_model;
use q2p_core::{GraphSplits, ModelConfig, ModelParams, SampleConfig};

pub struct Fixture {
    pub splits: GraphSplits,
    pub dataset: Dataset,
    pub params: ModelParams<f32>,
}

/// The default synthetic graph, a small sampled dataset and a freshly
/// initialised `d = 32, K = 3` model.
pub fn toy_fixture(seed: u64) -> Fixture {
    let kg = synthetic::generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .expect("default synthetic config is valid");
    let splits = kg.splits().expect("synthetic splits are consistent");
    let sample = SampleConfig {
        train: 100,
        valid: 20,
        test: 20,
        seed,
        ..SampleConfig::default()
    };
    let dataset = generate_dataset(&splits, &sample).expect("toy graph supports every type");
    let params = init_model(
        ModelConfig::new(32, 3),
        splits.vocab.entities.len(),
        splits.vocab.relations.len(),
        seed,
    )
    .expect("model config is valid");
    Fixture {
        splits,
        dataset,
        params,
    }
}
