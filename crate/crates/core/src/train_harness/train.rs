use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::{Dataset, Window, WindowSampler};
use super::losses::{hybrid_ladder, intermediate_loss_var, main_loss_var};
use crate::error::{Error, Result};
use crate::media_io::write_atomic;
use crate::muna::FlowEstimator;
use crate::nn::{cosine_lr, Adam, AdamConfig, Checkpoint, Graph, ParamStore, Var};
use crate::noise_model::{make_schedule, NoiseSchedule};
use crate::pdis_net::Crds;

pub const ENCODER_PREFIX: &str = "enc.";
pub const DECODER_PREFIX: &str = "dec.";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_TRACE: &str = "loss_trace.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Encoder frozen; `λ_I·L_I + L_M`.
    EncoderFrozen,
    /// Everything trainable; `λ_I·L_I + L_M`.
    Joint,
    /// `L_M` only.
    MainOnly,
}

pub fn stage_at(cfg: &TrainConfig, iter: usize) -> Stage {
    if iter >= cfg.interm_iters {
        Stage::MainOnly
    } else if iter < cfg.encoder_freeze_iters {
        Stage::EncoderFrozen
    } else {
        Stage::Joint
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    /// Absent once intermediate supervision has ended.
    pub l_i: Option<f64>,
    pub l_m: f64,
    pub lr: f64,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    iteration: usize,
    config_hash: String,
    config: TrainConfig,
    loss_history: Vec<LossRecord>,
}

/// Weights, optimizer moments and run state of a training run.
#[derive(Clone, Debug)]
pub struct CheckpointState {
    /// Completed iterations.
    pub iteration: usize,
    pub loss_history: Vec<LossRecord>,
    pub config_hash: String,
    pub config: TrainConfig,
    pub weights: Checkpoint,
}

impl CheckpointState {
    fn capture(store: &ParamStore, adam: &Adam, cfg: &TrainConfig, iteration: usize, history: &[LossRecord]) -> Self {
        let weights = Checkpoint::capture(store, Some(adam), serde_json::Value::Null);
        Self::from_weights(weights, cfg, iteration, history)
    }

    fn from_weights(mut weights: Checkpoint, cfg: &TrainConfig, iteration: usize, history: &[LossRecord]) -> Self {
        let meta = StateMeta {
            iteration,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            loss_history: history.to_vec(),
        };
        weights.meta = serde_json::to_value(&meta).expect("state serializes");
        CheckpointState {
            iteration,
            loss_history: meta.loss_history,
            config_hash: meta.config_hash,
            config: meta.config,
            weights,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.weights.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let weights = Checkpoint::load(dir)?;
        let meta: StateMeta = serde_json::from_value(weights.meta.clone())
            .map_err(|e| Error::Manifest(format!("{}: not a training checkpoint ({e})", dir.display())))?;
        if meta.config.hash() != meta.config_hash {
            return Err(Error::Manifest(format!(
                "{}: config hash does not match its config",
                dir.display()
            )));
        }
        Ok(CheckpointState {
            iteration: meta.iteration,
            loss_history: meta.loss_history,
            config_hash: meta.config_hash,
            config: meta.config,
            weights,
        })
    }

    /// Rebuild the network and load every weight.
    pub fn model(&self) -> Result<(Crds, ParamStore)> {
        let (model, mut store) = build_model(&self.config)?;
        self.weights.restore_params(&mut store, "")?;
        Ok((model, store))
    }
}

pub fn build_model(cfg: &TrainConfig) -> Result<(Crds, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Crds::new(cfg.model, &mut store, &mut rng)?;
    Ok((model, store))
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoints, `config.json` and `loss_trace.csv` go here.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many completed iterations (for resumable runs).
    pub stop_at: Option<usize>,
    /// Continue from a checkpoint of the same config.
    pub resume: Option<PathBuf>,
}

/// The loss of one iteration; `l_i` is `None` when the term was not built.
pub struct StepLoss {
    pub total: Var,
    pub l_i: Option<Var>,
    pub l_m: Var,
}

/// Batch loss averaged over windows: `L_M + λ_I·L_I` before `interm_iters`,
/// `L_M` alone afterwards.
pub fn step_loss(
    g: &Graph,
    model: &Crds,
    flow: &dyn FlowEstimator,
    sched: &NoiseSchedule,
    windows: &[Window],
    cfg: &TrainConfig,
    iter: usize,
) -> Result<StepLoss> {
    let interm = stage_at(cfg, iter) != Stage::MainOnly && cfg.lambda_i > 0.0;
    let mut lm = Vec::with_capacity(windows.len());
    let mut li = Vec::with_capacity(windows.len());
    for w in windows {
        let lq: Vec<Var> = w.lq.iter().map(|t| g.constant(t.clone())).collect();
        let fv = model.forward_vars(g, &lq, flow, false)?;
        let recon = model.reconstruct_var(g, &lq, &fv, 0)?;
        lm.push(main_loss_var(g, &recon, &w.gt, cfg.charbonnier_eps));
        if interm {
            let hyb = hybrid_ladder(&w.gt, &w.lq, sched)?;
            li.push(intermediate_loss_var(g, model, &lq, &fv, &hyb, sched)?);
        }
    }
    let wb = 1.0 / windows.len() as f64;
    let mean = |v: &[Var]| g.weighted_sum(&v.iter().map(|t| (t, wb)).collect::<Vec<_>>());
    let l_m = mean(&lm);
    let (total, l_i) = if interm {
        let l_i = mean(&li);
        (g.weighted_sum(&[(&l_m, 1.0), (&l_i, cfg.lambda_i)]), Some(l_i))
    } else {
        (l_m.clone(), None)
    };
    Ok(StepLoss { total, l_i, l_m })
}

fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("iter,L_I,L_M,lr\n");
    for r in history {
        let li = r.l_i.map(|v| format!("{v:.9e}")).unwrap_or_default();
        writeln!(s, "{},{li},{:.9e},{:.9e}", r.iter, r.l_m, r.lr).unwrap();
    }
    s
}

fn persist(state: &CheckpointState, out: &Path) -> Result<()> {
    state.save(&out.join(CHECKPOINT_DIR))?;
    write_atomic(&out.join(LOSS_TRACE), loss_csv(&state.loss_history).as_bytes())
}

/// Three-stage training of the full network on random clip windows.
///
/// `ldrae` initializes the encoder and decoder. Each iteration draws its
/// batch from a generator seeded by `(seed, iteration)`, so a resumed run
/// continues exactly where the original would have.
pub fn train(
    dataset: &Dataset,
    ldrae: Option<&Checkpoint>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<CheckpointState> {
    cfg.validate()?;
    let sampler = WindowSampler::new(dataset, cfg.clip_frames, cfg.patch)?;
    let (model, mut store) = build_model(cfg)?;
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let mut history = Vec::new();
    let mut start = 0;

    if let Some(path) = &opts.resume {
        let state = CheckpointState::load(path)?;
        if state.config_hash != cfg.hash() {
            return Err(Error::Manifest(format!(
                "{} was written by a different config ({} vs {})",
                path.display(),
                state.config_hash,
                cfg.hash()
            )));
        }
        state.weights.restore_params(&mut store, "")?;
        state.weights.restore_adam(&store, &mut adam)?;
        start = state.iteration;
        history = state.loss_history;
        info!("resumed at iteration {start}");
    } else if let Some(ck) = ldrae {
        let n = ck.restore_params(&mut store, ENCODER_PREFIX)? + ck.restore_params(&mut store, DECODER_PREFIX)?;
        info!("loaded {n} autoencoder tensors");
    } else {
        warn!("no pretrained autoencoder given; training from random initialization");
    }

    if let Some(out) = &opts.out_dir {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_atomic(&out.join("config.json"), serde_json::to_string_pretty(cfg)?.as_bytes())?;
    }
    if cfg.flow_freeze_iters > 0 {
        info!(
            "flow estimator {:?} has no trainable parameters; freeze window and lr_flow do not apply",
            cfg.model.flow
        );
    }

    let sched = make_schedule(model.stages())?;
    let flow = cfg.model.flow.estimator();
    // weights that last produced a finite loss, and their iteration
    let mut good: Option<(Checkpoint, usize)> = None;
    let stop = opts.stop_at.unwrap_or(cfg.total_iters).min(cfg.total_iters);
    for iter in start..stop {
        let stage = stage_at(cfg, iter);
        if iter == start || stage != stage_at(cfg, iter - 1) {
            info!("iteration {iter}: stage {stage:?}");
        }
        store.set_trainable(ENCODER_PREFIX, stage != Stage::EncoderFrozen);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iter as u64);
        let windows: Vec<Window> = (0..cfg.batch).map(|_| sampler.sample(&mut rng)).collect();

        let (grads, record) = {
            let g = Graph::new(&store);
            let loss = step_loss(&g, &model, flow.as_ref(), &sched, &windows, cfg, iter)?;
            let total = loss.total.item();
            if !total.is_finite() {
                if let (Some(out), Some((weights, at))) = (&opts.out_dir, good.take()) {
                    persist(&CheckpointState::from_weights(weights, cfg, at, &history[..at]), out)?;
                }
                return Err(Error::Diverged {
                    iter,
                    detail: format!("loss {total}"),
                });
            }
            let lr = cosine_lr(cfg.lr_main, cfg.lr_min, iter, cfg.total_iters);
            let record = LossRecord {
                iter,
                l_i: loss.l_i.as_ref().map(Var::item),
                l_m: loss.l_m.item(),
                lr,
            };
            (g.backward(&loss.total).params(), record)
        };
        good = Some((Checkpoint::capture(&store, Some(&adam), serde_json::Value::Null), iter));
        let lr = record.lr;
        adam.step(&mut store, &grads, |_| lr);
        history.push(record);

        let done = iter + 1;
        if cfg.log_every > 0 && done % cfg.log_every == 0 {
            let k = cfg.log_every.min(history.len());
            let recent = &history[history.len() - k..];
            let lm = recent.iter().map(|r| r.l_m).sum::<f64>() / k as f64;
            info!("iter {done} L_M {lm:.6e} lr {lr:.3e}");
        }
        if let Some(out) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < stop {
                persist(&CheckpointState::capture(&store, &adam, cfg, done, &history), out)?;
            }
        }
    }
    store.set_trainable(ENCODER_PREFIX, true);
    let state = CheckpointState::capture(&store, &adam, cfg, stop.max(start), &history);
    if let Some(out) = &opts.out_dir {
        persist(&state, out)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldr_ae::LdraeConfig;
    use crate::muna::{FlowConfig, MunaConfig};
    use crate::pdis_net::CrdsConfig;
    use crate::synth::SynthConfig;
    use crate::toy_codec::CodecConfig;

    fn micro_cfg() -> TrainConfig {
        TrainConfig {
            total_iters: 6,
            interm_iters: 4,
            flow_freeze_iters: 0,
            encoder_freeze_iters: 2,
            lr_main: 1e-3,
            lr_min: 1e-5,
            batch: 1,
            patch: 8,
            clip_frames: 2,
            seed: 9,
            checkpoint_every: 2,
            log_every: 0,
            model: CrdsConfig {
                ldrae: LdraeConfig {
                    channels: 4,
                    frame_channels: 1,
                    enc_blocks: 1,
                    dec_blocks: 1,
                    dec_channels: 0,
                },
                stages: 2,
                muna: MunaConfig {
                    heads: 1,
                    ..Default::default()
                },
                flow: FlowConfig::Zero,
                rp_blocks: 0,
            },
            ..TrainConfig::tiny()
        }
    }

    fn data() -> Dataset {
        let s = SynthConfig {
            height: 16,
            width: 16,
            frames: 4,
            ..Default::default()
        };
        Dataset::synthesize(2, &s, CodecConfig::default(), 4).unwrap()
    }

    fn encoder_bytes(ck: &Checkpoint) -> Vec<Vec<f64>> {
        ck.params
            .iter()
            .filter(|(n, _)| n.starts_with(ENCODER_PREFIX))
            .map(|(_, t)| t.data().to_vec())
            .collect()
    }

    #[test]
    fn encoder_frozen_through_stage_one() {
        let cfg = micro_cfg();
        let ds = data();
        let (_, store) = build_model(&cfg).unwrap();
        let init = Checkpoint::capture(&store, None, serde_json::Value::Null);
        let s1 = train(
            &ds,
            None,
            &cfg,
            &TrainOptions {
                stop_at: Some(cfg.encoder_freeze_iters),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(encoder_bytes(&s1.weights), encoder_bytes(&init));
        let dec_changed = s1
            .weights
            .params
            .iter()
            .any(|(n, t)| !n.starts_with(ENCODER_PREFIX) && t.data() != init.params[n].data());
        assert!(dec_changed);
        let s2 = train(&ds, None, &cfg, &TrainOptions::default()).unwrap();
        assert_ne!(encoder_bytes(&s2.weights), encoder_bytes(&init));
    }

    #[test]
    fn stage_three_drops_intermediate_term() {
        let cfg = micro_cfg();
        let s = train(&data(), None, &cfg, &TrainOptions::default()).unwrap();
        for r in &s.loss_history {
            assert_eq!(r.l_i.is_some(), r.iter < cfg.interm_iters, "iter {}", r.iter);
        }
        let (model, store) = build_model(&cfg).unwrap();
        let sampler = WindowSampler::new(&data(), 2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = vec![sampler.sample(&mut rng)];
        let sched = make_schedule(2).unwrap();
        let tape = |iter: usize, lambda: f64| {
            let c = TrainConfig {
                lambda_i: lambda,
                ..cfg.clone()
            };
            let g = Graph::new(&store);
            let l = step_loss(&g, &model, &crate::muna::ZeroFlow, &sched, &w, &c, iter).unwrap();
            (g.tape_len(), l.l_i.is_some())
        };
        assert_eq!(tape(cfg.interm_iters, 0.1), tape(0, 0.0));
        assert!(tape(cfg.interm_iters - 1, 0.1).0 > tape(cfg.interm_iters, 0.1).0);
        assert!(!tape(cfg.interm_iters, 0.1).1);
    }

    #[test]
    fn deterministic_and_resumable() {
        let cfg = micro_cfg();
        let ds = data();
        let a = train(&ds, None, &cfg, &TrainOptions::default()).unwrap();
        let b = train(&ds, None, &cfg, &TrainOptions::default()).unwrap();
        assert_eq!(a.loss_history, b.loss_history);

        let dir = tempfile::tempdir().unwrap();
        let part = train(
            &ds,
            None,
            &cfg,
            &TrainOptions {
                out_dir: Some(dir.path().to_path_buf()),
                stop_at: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(part.iteration, 3);
        let resumed = train(
            &ds,
            None,
            &cfg,
            &TrainOptions {
                resume: Some(dir.path().join(CHECKPOINT_DIR)),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(resumed.loss_history, a.loss_history);
        for (n, t) in &a.weights.params {
            assert_eq!(t.data(), resumed.weights.params[n].data(), "{n}");
        }
        let csv = fs::read_to_string(dir.path().join(LOSS_TRACE)).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("iter,L_I,L_M,lr\n"));

        let other = TrainConfig { seed: 10, ..cfg };
        let err = train(
            &ds,
            None,
            &other,
            &TrainOptions {
                resume: Some(dir.path().join(CHECKPOINT_DIR)),
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(Error::Manifest(_))));
    }

    #[test]
    fn divergence_keeps_last_good_checkpoint() {
        let cfg = TrainConfig {
            lr_main: 1e300,
            lr_min: 1e300,
            ..micro_cfg()
        };
        let dir = tempfile::tempdir().unwrap();
        let err = train(
            &data(),
            None,
            &cfg,
            &TrainOptions {
                out_dir: Some(dir.path().to_path_buf()),
                ..Default::default()
            },
        );
        let Err(Error::Diverged { iter, .. }) = err else {
            panic!("expected divergence, got {err:?}");
        };
        let last = CheckpointState::load(&dir.path().join(CHECKPOINT_DIR)).unwrap();
        assert_eq!(last.iteration + 1, iter);
        assert_eq!(last.loss_history.len(), last.iteration);
        assert!(last.weights.params.values().all(|t| t.all_finite()));
    }
}
