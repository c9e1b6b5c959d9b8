//! Synthetic data, the SGD trainer and the binary margin experiment.

mod checkpoint;
mod experiment;
mod model;
mod synthetic;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use experiment::{
    binary_margin_experiment, measure_angular_separation, BinaryMargin, ClassStats, Separation,
};
pub use model::{EmbedKind, Embedding, ModelState};
pub use synthetic::{
    generate_synthetic, Dataset, SyntheticSpec, KAPPA_POINT_MASS, MAX_REJECTION_ATTEMPTS,
};
pub use train::{accuracy, init_model, train, train_model, StepRecord, TrainConfig, TrainHistory};
