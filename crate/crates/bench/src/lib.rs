//! Shared fixtures for the criterion benchmarks in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treenc::{EncoderConfig, LayoutKind, LeafRnn, Model, ModelConfig, Padded, ParamSet, Pooling, TaskKind};

pub const VOCAB: usize = 50;

/// A classifier over `layout` with `dim`-wide embeddings and states.
pub fn model(layout: LayoutKind, leaf_rnn: LeafRnn, dim: usize) -> (Model, ParamSet<f32>) {
    let model = Model::new(ModelConfig {
        task: TaskKind::Classify,
        encoder: EncoderConfig {
            layout,
            leaf_rnn,
            embed_dim: dim,
            leaf_rnn_dim: dim / 2,
            hidden_dim: dim,
            pooling: Pooling::None,
            gumbel_temperature: 1.0,
        },
        vocab_size: VOCAB,
        num_classes: 4,
        mlp_hidden: dim,
        ..ModelConfig::default()
    })
    .expect("valid config");
    let params = model.init_params(&mut ChaCha8Rng::seed_from_u64(0)).expect("init");
    (model, params)
}

/// `batch` random sentences of exactly `len` tokens.
pub fn sentences(batch: usize, len: usize, seed: u64) -> Padded {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: Vec<Vec<usize>> = (0..batch)
        .map(|_| (0..len).map(|_| rng.random_range(4..VOCAB)).collect())
        .collect();
    Padded::new(&s, None).expect("nonempty")
}
