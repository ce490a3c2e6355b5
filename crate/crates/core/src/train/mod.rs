//! Optimization: AdamW, the cosine schedule, augmentation and the epoch loop.

mod augment;
mod optim;
mod run;
mod schedule;
mod trainer;

pub use augment::{augment_pair, flip_pair, rotate_pair, sample_seed, AugmentationConfig};
pub use optim::{AdamWConfig, OptimizerState};
pub use run::{load_split, run_training, EpochRecord, TrainOutcome, BEST_CHECKPOINT, LAST_CHECKPOINT};
pub use schedule::{cosine_lr, ScheduleConfig};
pub use trainer::{evaluate, train_epoch, EpochPlan, EpochStats};
