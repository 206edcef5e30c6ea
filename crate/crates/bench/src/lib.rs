//! Shared fixtures for the training benchmarks.

use n2rec::ingest::{split, Dataset, DEFAULT_TRAIN_FRACTION};
use n2rec::joint::substream;
use n2rec::models::{Model, ModelKind, SharedParams};
use n2rec::synth::{generate, SynthConfig};

pub const BENCH_DIM: usize = 32;

/// Split synthetic dataset of the default size.
pub fn dataset() -> Dataset {
    let data = generate(&SynthConfig::default()).expect("default synth config is valid");
    split(data.dataset, DEFAULT_TRAIN_FRACTION).expect("every synth user has at least 2 check-ins")
}

/// Freshly initialised model and shared embeddings for `dataset`.
pub fn fresh(kind: ModelKind, dataset: &Dataset) -> (Model, SharedParams) {
    let mut rng = substream(0, 0);
    let params = SharedParams::init(dataset.num_users(), dataset.num_pois(), BENCH_DIM, &mut rng);
    let model = Model::new(kind, dataset.num_users(), dataset.num_pois(), BENCH_DIM, &mut rng);
    (model, params)
}
