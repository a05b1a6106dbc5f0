pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod model;

pub use attention::{AttentionModule, BranchNorm};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest};
pub use config::{ModelConfig, RefineSignal, SupervisionStrategy, Widths};
pub use layers::{BatchNorm, Conv, ConvBnPrelu, Ctx, Init, Prelu, ResidualBlock, SupervisionHead};
pub use model::{attention_param_count, param_count, ForwardOutputs, Network, ATTENTION_PREFIX};
