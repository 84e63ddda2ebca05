//! Training orchestration: optimizer, two-phase loop, checkpoint selection
//! and averaging, self-distillation and experiment helpers.

mod adam;
mod checkpoints;
mod config;
mod run;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoints::{
    average_checkpoints, averaging_indices, best_average, distill_corpus, load_bundle, select_single, AverageChoice, AverageMode,
    Bundle,
};
pub use config::{model_config_from_text, model_config_to_text, RunConfig, TrainSettings, KEYS};
pub use run::{prepare_data, train_from_config, RunSummary};
pub use train::{
    checkpoint_path, iteration_line, train_model, validation_bleu, write_sidecars, EpochRecord, Phase, TrainData, TrainOptions,
    TrainOutcome, TrainState,
};

use crate::{par, Result};

/// Runs one independent experiment per seed, in parallel when enabled.
/// Results come back in seed order.
pub fn over_seeds<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    par::map(seeds, |&s| f(s)).into_iter().collect()
}
