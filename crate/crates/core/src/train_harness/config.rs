use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ldr_ae::LdraeConfig;
use crate::muna::{FlowConfig, MunaConfig};
use crate::pdis_net::CrdsConfig;

pub const SEED_ENV: &str = "CRDS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: usize,
    /// Intermediate supervision runs while `iter < interm_iters`.
    pub interm_iters: usize,
    pub flow_freeze_iters: usize,
    pub encoder_freeze_iters: usize,
    pub lr_main: f64,
    pub lr_flow: f64,
    /// Floor of the cosine schedule.
    pub lr_min: f64,
    pub batch: usize,
    pub patch: usize,
    /// Consecutive frames per training sample.
    pub clip_frames: usize,
    pub seed: u64,
    pub lambda_i: f64,
    pub charbonnier_eps: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub model: CrdsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Laptop-scale schedule: the published one scaled down fifty-fold.
    pub fn desk() -> Self {
        TrainConfig {
            total_iters: 6000,
            interm_iters: 3000,
            flow_freeze_iters: 100,
            encoder_freeze_iters: 400,
            lr_main: 1e-4,
            lr_flow: 2.5e-5,
            lr_min: 1e-7,
            batch: 2,
            patch: 64,
            clip_frames: 3,
            seed: 0,
            lambda_i: 0.1,
            charbonnier_eps: 1e-3,
            checkpoint_every: 1000,
            log_every: 100,
            model: CrdsConfig::default(),
        }
    }

    /// Small network and patches for CPU runs in minutes.
    pub fn tiny() -> Self {
        TrainConfig {
            lr_main: 5e-4,
            batch: 1,
            patch: 32,
            model: CrdsConfig {
                ldrae: LdraeConfig {
                    channels: 16,
                    frame_channels: 1,
                    enc_blocks: 2,
                    dec_blocks: 1,
                    dec_channels: 0,
                },
                stages: 4,
                muna: MunaConfig::default(),
                flow: FlowConfig::BlockMatch { block: 8, range: 4 },
                rp_blocks: 1,
            },
            ..TrainConfig::desk()
        }
    }

    /// Full-scale schedule.
    pub fn full() -> Self {
        TrainConfig {
            total_iters: 300_000,
            interm_iters: 150_000,
            flow_freeze_iters: 5_000,
            encoder_freeze_iters: 20_000,
            patch: 256,
            batch: 8,
            checkpoint_every: 10_000,
            ..TrainConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            "full" => Ok(Self::full()),
            other => Err(Error::InvalidInput(format!(
                "unknown preset {other:?} (desk, tiny, full)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.interm_iters > self.total_iters {
            return bad(format!(
                "interm_iters {} > total_iters {}",
                self.interm_iters, self.total_iters
            ));
        }
        if self.encoder_freeze_iters > self.total_iters || self.flow_freeze_iters > self.total_iters {
            return bad("freeze windows exceed total_iters".into());
        }
        if !(self.lr_main > 0.0 && self.lr_flow > 0.0 && self.lr_min >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch == 0 || self.clip_frames == 0 {
            return bad("batch and clip_frames must be positive".into());
        }
        if self.charbonnier_eps <= 0.0 || self.lambda_i < 0.0 {
            return bad("charbonnier_eps must be positive and lambda_i non-negative".into());
        }
        if self.patch < self.model.muna.window.max(crate::ldr_ae::MIN_SIZE) {
            return bad(format!("patch {} smaller than the attention window", self.patch));
        }
        self.model.muna.validate(self.model.ldrae.channels)
    }

    /// Replace the seed with `CRDS_SEED` when that variable is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in ["desk", "tiny", "full"] {
            TrainConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("huge").is_err());
        let mut c = TrainConfig::tiny();
        c.interm_iters = c.total_iters + 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_falls_back_to_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"total_iters": 10, "model": {"stages": 2}}"#).unwrap();
        assert_eq!(c.total_iters, 10);
        assert_eq!(c.model.stages, 2);
        assert_eq!(c.lambda_i, 0.1);
        assert_ne!(c.hash(), TrainConfig::desk().hash());
        assert_eq!(TrainConfig::desk().hash(), TrainConfig::desk().hash());
    }
}
