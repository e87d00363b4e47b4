//! Clip storage, normalization, patch sampling and quality metrics.

mod container;
mod frame;
mod metrics;
mod patches;

pub(crate) use container::write_atomic;
pub use container::{load_clip, save_clip, Colorspace, Fps, RawClip, MAGIC};
pub use frame::{frame_from_u8, from_frames, to_frames, to_u8_sample, Frame};
pub use metrics::{
    delta_metrics, delta_metrics_on, mse, psnr, psnr_on, ssim, ssim_on, write_reports, MetricPlane, MetricsReport,
    CSV_HEADER, PSNR_CAP_DB,
};
pub use patches::{sample_patch_coords, sample_patches, PatchCoord, PatchPair};
