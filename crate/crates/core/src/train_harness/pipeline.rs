use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{clip_seed, Dataset};
use crate::error::{Error, Result};
use crate::ldr_ae::{pretrain, Ldrae, LdraeConfig, PretrainConfig, PretrainReport};
use crate::media_io::sample_patches;
use crate::nn::{Checkpoint, ParamStore};
use crate::noise_model::make_schedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderJob {
    pub model: LdraeConfig,
    pub stages: usize,
    pub patch: usize,
    pub patches_per_clip: usize,
    pub train: PretrainConfig,
}

impl Default for AutoencoderJob {
    fn default() -> Self {
        AutoencoderJob {
            model: LdraeConfig::default(),
            stages: 4,
            patch: 32,
            patches_per_clip: 64,
            train: PretrainConfig::default(),
        }
    }
}

/// Pretrain the autoencoder on patches cut from every clip of `dataset`.
/// The checkpoint carries the job as metadata.
pub fn pretrain_autoencoder(dataset: &Dataset, job: &AutoencoderJob) -> Result<(Checkpoint, PretrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let mut patches = Vec::new();
    for (i, c) in dataset.clips.iter().enumerate() {
        patches.extend(sample_patches(
            &c.lq,
            &c.gt,
            job.patch,
            job.patches_per_clip,
            clip_seed(job.train.seed, i),
        )?);
    }
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(job.train.seed);
    let model = Ldrae::new(job.model, &mut store, &mut rng)?;
    let sched = make_schedule(job.stages)?;
    let report = pretrain(&model, &mut store, &patches, &sched, &job.train)?;
    let meta = serde_json::json!({ "job": job, "eval_loss": report.eval_loss, "zero_baseline": report.zero_baseline });
    Ok((Checkpoint::capture(&store, None, meta), report))
}
