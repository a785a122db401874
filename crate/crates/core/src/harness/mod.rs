//! Training, evaluation, metrics, data and embedding I/O, checkpoints and the
//! multi-run experiment protocols.

mod adam;
mod checkpoint;
mod data;
mod embeddings;
mod metrics;
mod sweep;
mod synth;
mod train;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use data::{header, read_examples, read_trees, tokenize, write_examples, write_trees, Dataset, Example};
pub use embeddings::{load_embeddings, Coverage};
pub use metrics::{
    accuracy, accuracy_by_length, bleu, bleu_by_length, bucket_indices, bucket_range, by_length, length_bucket, Bleu,
    BleuLevel, BleuOptions, BucketMetric,
};
pub use sweep::{mean, mean_random_depth, median, rho_sweep, run_seeds, SeedRun, SweepRow};
pub use synth::{synth_generate, token, token_class, SynthSpec, SynthTask};
pub use train::{
    steps_per_epoch, train, DataPaths, EpochRecord, EvalOutcome, EvalReport, Experiment, TrainConfig, TrainOutcome,
    Trained,
};

#[cfg(test)]
mod tests;
