//! Training regimes (from-scratch ViT, frozen feature extractor, adapted
//! encoder), the optimizer and gradient verification.

mod config;
mod fit;
pub mod gradcheck;
mod optimizer;
mod step;
mod trainable;

pub use config::{TrainConfig, TrainMode};
pub use fit::{fit, initial_model, EpochLog, FitOutcome};
pub use optimizer::{decays, AdamW};
pub use step::{compute_gradients, train_step, TrainBatch};
pub use trainable::{build_trainable_set, everything_trainable, GroupKind, ParamGroup, TrainableSet};
