//! Losses, the three-stage training schedule, checkpoints and evaluation.

mod config;
mod dataset;
mod eval;
mod losses;
mod pipeline;
mod train;

pub use config::{TrainConfig, SEED_ENV};
pub use dataset::{clip_seed, Dataset, DatasetManifest, ManifestEntry, PairedClip, Window, WindowSampler, CLIP_EXT};
pub use eval::{evaluate, evaluate_model, evaluate_model_on, stage_psnr, Evaluation};
pub use losses::{charbonnier, hybrid_ladder, intermediate_loss, intermediate_loss_var, main_loss, main_loss_var};
pub use pipeline::{pretrain_autoencoder, AutoencoderJob};
pub use train::{
    build_model, stage_at, step_loss, train, CheckpointState, LossRecord, Stage, StepLoss, TrainOptions,
    CHECKPOINT_DIR, DECODER_PREFIX, ENCODER_PREFIX, LOSS_TRACE,
};
