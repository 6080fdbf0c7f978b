//! Fixtures shared by the benchmarks.

use triage_core::datagen::{generate, Corpus, GeneratorConfig};
use triage_core::nn::{Init, ParameterSet, Tensor};

/// A `len x dim` matrix of standard normal rows.
pub fn random_rows(len: usize, dim: usize, seed: u64) -> Tensor {
    let mut params = ParameterSet::new(seed);
    let id = params.add("x", &[len, dim], Init::Normal(1.0));
    params.get(id).clone()
}

/// Default-sized synthetic corpus.
pub fn corpus(seed: u64) -> Corpus {
    generate(&GeneratorConfig {
        seed,
        ..Default::default()
    })
    .expect("default generator config is valid")
}
