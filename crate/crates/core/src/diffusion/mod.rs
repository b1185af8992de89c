//! Conditional diffusion over embedding vectors: schedule, denoiser, losses,
//! training and sampling.

pub mod denoiser;
pub mod loss;
pub mod sample;
pub mod schedule;
pub mod train;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use loss::{
    batch_loss, contrastive_parts, cosine, loss_contrastive, loss_mse, total_loss, ContrastiveConfig, ContrastiveMode,
    ContrastiveParts,
};
pub use sample::{sample, sample_batch};
pub use schedule::{make_schedule, q_sample, NoiseSchedule, ScheduleConfig};
pub use train::{train_stage, Conditioning, LossRecord, OptimConfig, StageData, TrainConfig, TrainOutput};
