//! Extractor / predictor / discriminator networks, the weighted
//! adversarial objective with gradient reversal, the training loop and
//! the baseline training modes.

mod model;
mod objective;
mod train;
mod variants;

pub use model::{ArchSpec, ConvSpec, Group, PhyMdanModel};
pub use objective::{
    discriminator_loss, discriminator_term, predictor_loss, predictor_term, total_objective,
    Batches, Objective, SourceBatch,
};
pub use train::{build_model, predict, predict_dataset, train, EpochLog, TrainConfig, TrainLog};
pub use variants::{train_variant, Variant, VariantOutcome, VariantRun, SUPERVISED_TEST_FRACTION};
