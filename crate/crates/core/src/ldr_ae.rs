//! Latent degradation-residual auto-encoder: a shared encoder from frames to
//! full-resolution latents and a light two-to-one decoder that predicts the
//! data-space residual between two encoded frames.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media_io::{Frame, PatchPair};
use crate::nn::{cosine_lr, run_blocks, Adam, AdamConfig, Conv2d, Graph, Init, ParamStore, ResBlock, Var};
use crate::noise_model::{hybrid_tensor, NoiseSchedule};
use crate::tensor::Tensor;

/// Smallest spatial size the 3×3 stack accepts.
pub const MIN_SIZE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdraeConfig {
    /// Latent channels.
    pub channels: usize,
    pub frame_channels: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    /// Decoder width; 0 means `channels / 2`.
    pub dec_channels: usize,
}

impl Default for LdraeConfig {
    fn default() -> Self {
        LdraeConfig {
            channels: 64,
            frame_channels: 1,
            enc_blocks: 5,
            dec_blocks: 2,
            dec_channels: 0,
        }
    }
}

impl LdraeConfig {
    pub fn decoder_width(&self) -> usize {
        if self.dec_channels == 0 {
            (self.channels / 2).max(1)
        } else {
            self.dec_channels
        }
    }
}

/// Latent feature map `[channels, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMap(pub Tensor);

impl LatentMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub stem: Conv2d,
    pub blocks: Vec<ResBlock>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub fuse: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub out: Conv2d,
}

/// Parameter handles of an LDR-AE; values live in a [`ParamStore`] under
/// the `enc.` and `dec.` prefixes.
#[derive(Clone, Debug)]
pub struct Ldrae {
    pub config: LdraeConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Ldrae {
    pub fn new(config: LdraeConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        if config.channels == 0 || config.frame_channels == 0 {
            return Err(Error::InvalidInput("channel counts must be positive".into()));
        }
        let c = config.channels;
        let cd = config.decoder_width();
        let kaiming = Init::Kaiming { scale: 1.0 };
        let encoder = Encoder {
            stem: Conv2d::new(store, rng, "enc.stem", config.frame_channels, c, 3, true, kaiming),
            blocks: (0..config.enc_blocks)
                .map(|i| ResBlock::new(store, rng, &format!("enc.block{i}"), c))
                .collect(),
        };
        let decoder = Decoder {
            fuse: Conv2d::new(store, rng, "dec.fuse", 2 * c, cd, 1, true, kaiming),
            blocks: (0..config.dec_blocks)
                .map(|i| ResBlock::new(store, rng, &format!("dec.block{i}"), cd))
                .collect(),
            out: Conv2d::new(store, rng, "dec.out", cd, config.frame_channels, 3, true, Init::Zero),
        };
        Ok(Ldrae {
            config,
            encoder,
            decoder,
        })
    }

    fn check_frame(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.config.frame_channels {
            return Err(Error::Shape(format!(
                "encoder expects [{}, H, W], got {shape:?}",
                self.config.frame_channels
            )));
        }
        if shape[1] < MIN_SIZE || shape[2] < MIN_SIZE {
            return Err(Error::Shape(format!(
                "frame {shape:?} smaller than {MIN_SIZE}x{MIN_SIZE}"
            )));
        }
        Ok(())
    }

    pub fn encode_var(&self, g: &Graph, x: &Var) -> Result<Var> {
        self.check_frame(x.shape())?;
        let h = self.encoder.stem.forward(g, x);
        Ok(run_blocks(&self.encoder.blocks, g, h))
    }

    /// Data-space residual taking the frame behind `lat_lq` to the one
    /// behind `lat_hq`.
    pub fn decode_var(&self, g: &Graph, lat_lq: &Var, lat_hq: &Var) -> Result<Var> {
        if lat_lq.shape() != lat_hq.shape() {
            return Err(Error::Shape(format!(
                "latents {:?} vs {:?}",
                lat_lq.shape(),
                lat_hq.shape()
            )));
        }
        if lat_lq.shape().first() != Some(&self.config.channels) {
            return Err(Error::Shape(format!(
                "decoder expects {} latent channels, got {:?}",
                self.config.channels,
                lat_lq.shape()
            )));
        }
        let h = self.decoder.fuse.forward(g, &g.concat(&[lat_lq, lat_hq]));
        let h = run_blocks(&self.decoder.blocks, g, h);
        Ok(self.decoder.out.forward(g, &h))
    }

    pub fn encode(&self, store: &ParamStore, x: &Frame) -> Result<LatentMap> {
        let g = Graph::inference(store);
        let v = self.encode_var(&g, &g.constant(x.tensor().clone()))?;
        Ok(LatentMap(v.value().clone()))
    }

    pub fn decode(&self, store: &ParamStore, lat_lq: &LatentMap, lat_hq: &LatentMap) -> Result<Tensor> {
        let g = Graph::inference(store);
        let v = self.decode_var(&g, &g.constant(lat_lq.0.clone()), &g.constant(lat_hq.0.clone()))?;
        Ok(v.value().clone())
    }

    pub fn encoder_params(&self, store: &ParamStore) -> usize {
        store.count_scalars("enc.")
    }

    pub fn decoder_params(&self, store: &ParamStore) -> usize {
        store.count_scalars("dec.")
    }
}

fn loss_weight(alpha: f64, eps: f64) -> Result<f64> {
    if eps <= 0.0 || eps.is_nan() {
        return Err(Error::InvalidInput(format!("ε must be positive, got {eps}")));
    }
    Ok(1.0 / (alpha + eps))
}

/// `mean((pred + x̂ − x̂ˢ)²) / (α_s + ε)` on the graph.
pub fn ldrae_loss_var(g: &Graph, pred: &Var, x_hat: &Tensor, x_hat_s: &Tensor, alpha: f64, eps: f64) -> Result<Var> {
    let w = loss_weight(alpha, eps)?;
    let target = x_hat_s.sub(x_hat)?;
    crate::error::ensure_shape!(
        pred.shape() == target.shape(),
        "prediction {:?} vs target {:?}",
        pred.shape(),
        target.shape()
    );
    Ok(g.mse(pred, &target, w))
}

pub fn ldrae_loss(pred: &Tensor, x_hat: &Tensor, x_hat_s: &Tensor, alpha: f64, eps: f64) -> Result<f64> {
    let w = loss_weight(alpha, eps)?;
    let err = pred.add(x_hat)?.sub(x_hat_s)?;
    Ok(w * err.data().iter().map(|v| v * v).sum::<f64>() / err.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub eps: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iters: 2000,
            batch: 4,
            lr: 5e-4,
            lr_min: 1e-6,
            eps: 0.25,
            seed: 0,
            log_every: 100,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainReport {
    pub loss_trace: Vec<f64>,
    /// Mean loss of the trained model on a fixed evaluation draw.
    pub eval_loss: f64,
    /// Mean loss of an all-zero residual on the same draw.
    pub zero_baseline: f64,
}

/// Noise levels the pretraining draws from: `0..N` (the fully compressed
/// endpoint, whose target is zero, is excluded).
fn draw_level(rng: &mut impl Rng, sched: &NoiseSchedule) -> usize {
    rng.gen_range(0..sched.levels())
}

/// Mean loss over `count` seeded (patch, level) draws, for the model and for
/// a zero prediction.
pub fn evaluate_pretrain(
    model: &Ldrae,
    store: &ParamStore,
    data: &[PatchPair],
    sched: &NoiseSchedule,
    eps: f64,
    count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut model_loss, mut zero_loss) = (0.0, 0.0);
    for _ in 0..count {
        let p = &data[rng.gen_range(0..data.len())];
        let s = draw_level(&mut rng, sched);
        let a = sched.alpha(s)?;
        let xs = hybrid_tensor(p.gt.tensor(), p.lq.tensor(), a)?;
        let pred = model.decode(
            store,
            &model.encode(store, &p.lq)?,
            &model.encode(store, &Frame(xs.clone()))?,
        )?;
        model_loss += ldrae_loss(&pred, p.lq.tensor(), &xs, a, eps)?;
        zero_loss += ldrae_loss(&Tensor::zeros(pred.shape()), p.lq.tensor(), &xs, a, eps)?;
    }
    Ok((model_loss / count as f64, zero_loss / count as f64))
}

/// Train encoder and decoder on mixed-level hybrid targets.
pub fn pretrain(
    model: &Ldrae,
    store: &mut ParamStore,
    data: &[PatchPair],
    sched: &NoiseSchedule,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("pretraining needs at least one patch pair".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidInput("batch must be positive".into()));
    }
    let mut adam = Adam::new(AdamConfig::default(), store);
    let mut trace = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iter as u64);
        let grads = {
            let g = Graph::new(store);
            let mut terms = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let p = &data[rng.gen_range(0..data.len())];
                let s = draw_level(&mut rng, sched);
                let a = sched.alpha(s)?;
                let xs = hybrid_tensor(p.gt.tensor(), p.lq.tensor(), a)?;
                let lat_lq = model.encode_var(&g, &g.constant(p.lq.tensor().clone()))?;
                let lat_s = model.encode_var(&g, &g.constant(xs.clone()))?;
                let pred = model.decode_var(&g, &lat_lq, &lat_s)?;
                terms.push(ldrae_loss_var(&g, &pred, p.lq.tensor(), &xs, a, cfg.eps)?);
            }
            let weighted: Vec<(&Var, f64)> = terms.iter().map(|t| (t, 1.0 / cfg.batch as f64)).collect();
            let loss = g.weighted_sum(&weighted);
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    iter,
                    detail: format!("pretraining loss {value}"),
                });
            }
            trace.push(value);
            g.backward(&loss).params()
        };
        let lr = cosine_lr(cfg.lr, cfg.lr_min, iter, cfg.iters);
        adam.step(store, &grads, |_| lr);
        if cfg.log_every > 0 && (iter + 1) % cfg.log_every == 0 {
            let k = cfg.log_every.min(trace.len());
            let recent = trace[trace.len() - k..].iter().sum::<f64>() / k as f64;
            info!("pretrain iter {} loss {:.6e} lr {:.3e}", iter + 1, recent, lr);
        }
    }
    let (eval_loss, zero_baseline) = evaluate_pretrain(
        model,
        store,
        data,
        sched,
        cfg.eps,
        64.min(data.len() * 4),
        cfg.seed ^ 0x5eed,
    )?;
    Ok(PretrainReport {
        loss_trace: trace,
        eval_loss,
        zero_baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_gradients, perturb_params};
    use crate::noise_model::make_schedule;

    fn micro(store: &mut ParamStore) -> Ldrae {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = LdraeConfig {
            channels: 4,
            frame_channels: 1,
            enc_blocks: 1,
            dec_blocks: 1,
            dec_channels: 0,
        };
        Ldrae::new(cfg, store, &mut rng).unwrap()
    }

    fn rand_frame(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[1, h, w], (0..h * w).map(|_| rng.gen()).collect())
    }

    #[test]
    fn shapes_and_determinism() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Ldrae::new(LdraeConfig::default(), &mut store, &mut rng).unwrap();
        let x = Frame(rand_frame(2, 32, 32));
        let a = m.encode(&store, &x).unwrap();
        assert_eq!(a.0.shape(), &[64, 32, 32]);
        assert_eq!(a, m.encode(&store, &x).unwrap());
        assert!(m.decoder_params(&store) * 4 < m.encoder_params(&store));
        assert!(m.encode(&store, &Frame(Tensor::zeros(&[1, 2, 8]))).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero_residual() {
        let mut store = ParamStore::new();
        let m = micro(&mut store);
        let a = m.encode(&store, &Frame(rand_frame(3, 8, 8))).unwrap();
        let b = m.encode(&store, &Frame(rand_frame(4, 8, 8))).unwrap();
        let r = m.decode(&store, &a, &b).unwrap();
        assert_eq!(r.shape(), &[1, 8, 8]);
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert!(m.decode(&store, &a, &LatentMap(Tensor::zeros(&[4, 8, 7]))).is_err());
    }

    #[test]
    fn loss_examples() {
        let xh = rand_frame(5, 4, 4);
        let xs = rand_frame(6, 4, 4);
        let exact = xs.sub(&xh).unwrap();
        assert_eq!(ldrae_loss(&exact, &xh, &xs, 0.5, 0.25).unwrap(), 0.0);
        let pred = Tensor::zeros(&[1, 4, 4]);
        let raw = ldrae_loss(&pred, &xh, &xs, 1.0 - 0.25, 0.25).unwrap();
        let at0 = ldrae_loss(&pred, &xh, &xs, 0.0, 0.25).unwrap();
        assert!((at0 - 4.0 * raw).abs() < 1e-12);
        assert!((raw / at0 - 0.25).abs() < 1e-12);
        assert!(ldrae_loss(&pred, &xh, &xs, 0.0, 0.0).is_err());
        let mut prev = f64::INFINITY;
        for a in [0.0, 0.25, 0.5, 0.75] {
            let l = ldrae_loss(&pred, &xh, &xs, a, 0.25).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let m = micro(&mut store);
        perturb_params(&mut store, 0.05, 7);
        let (xh, xs) = (rand_frame(8, 8, 8), rand_frame(9, 8, 8));
        let report = check_gradients(
            &store,
            |g| {
                let a = m.encode_var(g, &g.constant(xh.clone())).unwrap();
                let b = m.encode_var(g, &g.constant(xs.clone())).unwrap();
                let p = m.decode_var(g, &a, &b).unwrap();
                ldrae_loss_var(g, &p, &xh, &xs, 0.25, 0.25).unwrap()
            },
            1e-6,
            12,
            0,
        );
        assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst());
    }

    #[test]
    fn short_pretraining_is_finite_and_reproducible() {
        use crate::media_io::sample_patches;
        use crate::synth::{synthesize_clip, SynthConfig};
        use crate::toy_codec::{encode_clip, CodecConfig};
        let clip = synthesize_clip(
            &SynthConfig {
                height: 16,
                width: 16,
                frames: 3,
                ..Default::default()
            },
            0,
        );
        let (lq, _) = encode_clip(&clip, &CodecConfig::default()).unwrap();
        let data = sample_patches(&lq, &clip, 8, 6, 0).unwrap();
        let sched = make_schedule(4).unwrap();
        let cfg = PretrainConfig {
            iters: 5,
            batch: 2,
            ..Default::default()
        };
        let run = || {
            let mut store = ParamStore::new();
            let m = micro(&mut store);
            pretrain(&m, &mut store, &data, &sched, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.loss_trace.iter().all(|l| l.is_finite() && *l > 0.0));
        assert_eq!(a.loss_trace, b.loss_trace);
        let mut store = ParamStore::new();
        let m = micro(&mut store);
        assert!(pretrain(&m, &mut store, &[], &sched, &cfg).is_err());
    }
}
