pub mod adam;
pub mod augment;
pub mod config;
pub mod loss;
pub mod sampler;
pub mod schedule;
pub mod trainer;

pub use adam::Adam;
pub use augment::Transform;
pub use config::{AlphaPolicy, TrainConfig};
pub use loss::{alpha_for_batch, signal_names, total_loss, wbce_loss, LossTerms};
pub use sampler::{Batch, BatchSource, FixedBatch, PatchSampler};
pub use schedule::lr_at;
pub use trainer::{train, LossRecord, LossTrace, TrainHooks};
