//! Progressive denoising: N stacked blocks, each predicting latents with
//! MuNA, cleaning the residual with a bidirectional recurrent network and
//! adding the prediction back. The LDR-AE decoder maps the final latents to
//! a data-space correction of the compressed frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldr_ae::{Ldrae, LdraeConfig};
use crate::media_io::{from_frames, to_frames, Frame, RawClip};
use crate::muna::{FlowConfig, FlowEstimator, FlowTable, MunaConfig, MunaWeights};
use crate::nn::{run_blocks, Conv2d, Graph, Init, ParamStore, ResBlock, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrdsConfig {
    pub ldrae: LdraeConfig,
    /// Number of denoising blocks `N`.
    pub stages: usize,
    pub muna: MunaConfig,
    pub flow: FlowConfig,
    /// Residual blocks after each recurrent fusion convolution.
    pub rp_blocks: usize,
}

impl Default for CrdsConfig {
    fn default() -> Self {
        CrdsConfig {
            ldrae: LdraeConfig::default(),
            stages: 4,
            muna: MunaConfig::default(),
            flow: FlowConfig::default(),
            rp_blocks: 1,
        }
    }
}

/// One direction of the recurrence: `h_t = F([r_t, h_prev])`.
#[derive(Clone, Debug)]
pub struct RecurrentCell {
    pub merge: Conv2d,
    pub blocks: Vec<ResBlock>,
}

impl RecurrentCell {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, c: usize, blocks: usize) -> Self {
        RecurrentCell {
            merge: Conv2d::new(
                store,
                rng,
                &format!("{prefix}.merge"),
                2 * c,
                c,
                3,
                true,
                Init::Kaiming { scale: 1.0 },
            ),
            blocks: (0..blocks)
                .map(|i| ResBlock::new(store, rng, &format!("{prefix}.block{i}"), c))
                .collect(),
        }
    }

    fn step(&self, g: &Graph, r: &Var, prev: &Var) -> Var {
        let h = g.leaky_relu(&self.merge.forward(g, &g.concat(&[r, prev])));
        run_blocks(&self.blocks, g, h)
    }
}

/// Bidirectional residual propagation with an additive skip:
/// `r̃_t = r_t + H([h_t, g_t])`.
#[derive(Clone, Debug)]
pub struct ResidualPropagation {
    pub forward: RecurrentCell,
    pub backward: RecurrentCell,
    pub head_in: Conv2d,
    /// Zero-initialized, so a fresh network passes residuals through.
    pub head_out: Conv2d,
}

impl ResidualPropagation {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, c: usize, blocks: usize) -> Self {
        ResidualPropagation {
            forward: RecurrentCell::new(store, rng, &format!("{prefix}.fwd"), c, blocks),
            backward: RecurrentCell::new(store, rng, &format!("{prefix}.bwd"), c, blocks),
            head_in: Conv2d::new(
                store,
                rng,
                &format!("{prefix}.head_in"),
                2 * c,
                c,
                3,
                true,
                Init::Kaiming { scale: 1.0 },
            ),
            head_out: Conv2d::new(store, rng, &format!("{prefix}.head_out"), c, c, 3, true, Init::Zero),
        }
    }

    pub fn run(&self, g: &Graph, r_seq: &[Var]) -> Result<Vec<Var>> {
        let first = r_seq
            .first()
            .ok_or_else(|| Error::InvalidInput("residual propagation needs at least one frame".into()))?;
        let zero = g.constant(Tensor::zeros(first.shape()));
        let mut fwd = Vec::with_capacity(r_seq.len());
        let mut prev = zero.clone();
        for r in r_seq {
            prev = self.forward.step(g, r, &prev);
            fwd.push(prev.clone());
        }
        let mut bwd = vec![zero.clone(); r_seq.len()];
        let mut next = zero;
        for t in (0..r_seq.len()).rev() {
            next = self.backward.step(g, &r_seq[t], &next);
            bwd[t] = next.clone();
        }
        Ok(r_seq
            .iter()
            .zip(fwd.iter().zip(&bwd))
            .map(|(r, (h, b))| {
                let e = g.leaky_relu(&self.head_in.forward(g, &g.concat(&[h, b])));
                g.add(r, &self.head_out.forward(g, &e))
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct DenoisingBlock {
    pub muna: MunaWeights,
    pub rp: ResidualPropagation,
}

/// Intermediates of one denoising block, per frame.
#[derive(Clone, Debug, Default)]
pub struct StageTrace {
    /// Stage index `s` (the block maps `x^s` to `x^{s−1}`).
    pub stage: usize,
    pub predicted: Vec<Tensor>,
    pub residual: Vec<Tensor>,
    pub enhanced_residual: Vec<Tensor>,
    /// Per frame, per reference `m = −m_w..=m_w`: `[2, H, W]` motion.
    pub motion: Vec<Vec<Tensor>>,
}

pub struct BlockOutput {
    pub next: Vec<Var>,
    pub predicted: Vec<Var>,
    pub residual: Vec<Var>,
    pub enhanced_residual: Vec<Var>,
    pub motion: Vec<Vec<Tensor>>,
}

impl DenoisingBlock {
    /// `x^{s−1}_t = r̃_t + x̄_t` with `r = x^s − x̄`.
    pub fn run(&self, g: &Graph, xs: &[Var], flows: &FlowTable, keep_mv: bool) -> Result<BlockOutput> {
        let preds = self.muna.predict_sequence(g, xs, flows, keep_mv)?;
        let (predicted, motion): (Vec<Var>, Vec<Vec<Tensor>>) = preds.into_iter().unzip();
        let residual: Vec<Var> = xs.iter().zip(&predicted).map(|(x, p)| g.sub(x, p)).collect();
        let enhanced_residual = self.rp.run(g, &residual)?;
        let next = enhanced_residual
            .iter()
            .zip(&predicted)
            .map(|(r, p)| g.add(r, p))
            .collect();
        Ok(BlockOutput {
            next,
            predicted,
            residual,
            enhanced_residual,
            motion,
        })
    }
}

/// Parameter handles of the whole network.
#[derive(Clone, Debug)]
pub struct Crds {
    pub config: CrdsConfig,
    pub ldrae: Ldrae,
    /// `blocks[s − 1]` maps `x^s` to `x^{s−1}`.
    pub blocks: Vec<DenoisingBlock>,
}

/// Graph-level forward results.
pub struct ForwardVars {
    /// `latents[s][t]` = `x^{l,s}_t` for `s = 0..=N`.
    pub latents: Vec<Vec<Var>>,
    /// Decoder output `D(x^{l,N}, x^{l,0})` per frame (unclipped residual).
    pub correction: Vec<Var>,
    pub stages: Vec<StageTrace>,
}

/// Everything a forward pass produces, in plain tensors.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub lq: Vec<Tensor>,
    /// `latents[s][t]`; only `latents[N]` and `latents[0]` unless the trace
    /// was kept.
    pub latents: Vec<Vec<Tensor>>,
    /// Stages in execution order `s = N..=1`; empty unless kept.
    pub stages: Vec<StageTrace>,
    pub kept: bool,
}

impl Crds {
    pub fn new(config: CrdsConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        if config.stages == 0 {
            return Err(Error::InvalidInput("at least one denoising block is required".into()));
        }
        let ldrae = Ldrae::new(config.ldrae, store, rng)?;
        let c = config.ldrae.channels;
        let blocks = (1..=config.stages)
            .map(|s| {
                Ok(DenoisingBlock {
                    muna: MunaWeights::new(store, rng, &format!("stage{s}.muna"), c, config.muna)?,
                    rp: ResidualPropagation::new(store, rng, &format!("stage{s}.rp"), c, config.rp_blocks),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Crds { config, ldrae, blocks })
    }

    pub fn stages(&self) -> usize {
        self.config.stages
    }

    pub fn forward_vars(
        &self,
        g: &Graph,
        lq: &[Var],
        flow: &dyn FlowEstimator,
        keep_trace: bool,
    ) -> Result<ForwardVars> {
        if lq.is_empty() {
            return Err(Error::InvalidInput("empty clip".into()));
        }
        let n = self.config.stages;
        let frames: Vec<&Tensor> = lq.iter().map(Var::value).collect();
        let flows = FlowTable::estimate(&frames, self.config.muna.temporal_radius, flow)?;
        let top: Vec<Var> = lq.iter().map(|x| self.ldrae.encode_var(g, x)).collect::<Result<_>>()?;
        let mut latents = vec![Vec::new(); n + 1];
        latents[n] = top;
        let mut stages = Vec::new();
        for s in (1..=n).rev() {
            let out = self.blocks[s - 1].run(g, &latents[s], &flows, keep_trace)?;
            if keep_trace {
                let plain = |v: &[Var]| v.iter().map(|x| x.value().clone()).collect();
                stages.push(StageTrace {
                    stage: s,
                    predicted: plain(&out.predicted),
                    residual: plain(&out.residual),
                    enhanced_residual: plain(&out.enhanced_residual),
                    motion: out.motion,
                });
            }
            latents[s - 1] = out.next;
        }
        let correction = latents[n]
            .iter()
            .zip(&latents[0])
            .map(|(a, b)| self.ldrae.decode_var(g, a, b))
            .collect::<Result<_>>()?;
        Ok(ForwardVars {
            latents,
            correction,
            stages,
        })
    }

    /// Data-space frames `x̂_t + D(x^{l,N}_t, x^{l,s}_t)`, unclipped.
    pub fn reconstruct_var(&self, g: &Graph, lq: &[Var], fv: &ForwardVars, s: usize) -> Result<Vec<Var>> {
        let n = self.config.stages;
        if s > n {
            return Err(Error::InvalidInput(format!("stage {s} outside 0..={n}")));
        }
        lq.iter()
            .zip(fv.latents[n].iter().zip(&fv.latents[s]))
            .map(|(x, (a, b))| Ok(g.add(x, &self.ldrae.decode_var(g, a, b)?)))
            .collect()
    }
}

fn clip_unit(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Enhance a whole clip. Returns the enhanced clip (8-bit, clipped) and the
/// trace; `keep_trace` retains every stage's latents and intermediates.
pub fn crds_forward(
    store: &ParamStore,
    model: &Crds,
    lq: &RawClip,
    keep_trace: bool,
) -> Result<(RawClip, ForwardTrace)> {
    let (frames, trace) = crds_forward_frames(store, model, &to_frames(lq), keep_trace)?;
    Ok((from_frames(&frames, lq.fps)?, trace))
}

pub fn crds_forward_frames(
    store: &ParamStore,
    model: &Crds,
    lq: &[Frame],
    keep_trace: bool,
) -> Result<(Vec<Frame>, ForwardTrace)> {
    let g = Graph::inference(store);
    let inputs: Vec<Var> = lq.iter().map(|f| g.constant(f.tensor().clone())).collect();
    let flow = model.config.flow.estimator();
    let fv = model.forward_vars(&g, &inputs, flow.as_ref(), keep_trace)?;
    let enhanced = inputs
        .iter()
        .zip(&fv.correction)
        .map(|(x, c)| Ok(Frame(clip_unit(&x.value().add(c.value())?))))
        .collect::<Result<Vec<_>>>()?;
    let n = model.config.stages;
    let latents = fv
        .latents
        .iter()
        .enumerate()
        .map(|(s, l)| {
            if keep_trace || s == 0 || s == n {
                l.iter().map(|v| v.value().clone()).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let trace = ForwardTrace {
        lq: lq.iter().map(|f| f.tensor().clone()).collect(),
        latents,
        stages: fv.stages,
        kept: keep_trace,
    };
    Ok((enhanced, trace))
}

/// `x̂_t + D(x^{l,N}_t, x^{l,s}_t)` clipped to `[0, 1]`; `s = 0` reproduces
/// the forward output.
pub fn reconstruct_intermediate(
    store: &ParamStore,
    model: &Crds,
    trace: &ForwardTrace,
    s: usize,
) -> Result<Vec<Frame>> {
    let n = model.config.stages;
    if s > n {
        return Err(Error::InvalidInput(format!("stage {s} outside 0..={n}")));
    }
    if trace.latents.get(s).map_or(true, Vec::is_empty) {
        return Err(Error::InvalidInput(format!("trace does not hold stage {s} latents")));
    }
    let g = Graph::inference(store);
    trace
        .lq
        .iter()
        .zip(trace.latents[n].iter().zip(&trace.latents[s]))
        .map(|(x, (a, b))| {
            let d = model
                .ldrae
                .decode_var(&g, &g.constant(a.clone()), &g.constant(b.clone()))?;
            Ok(Frame(clip_unit(&x.add(d.value())?)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_io::{Colorspace, Fps};
    use crate::muna::ZeroFlow;
    use crate::nn::{check_gradients, perturb_params, ParamId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro_config() -> CrdsConfig {
        CrdsConfig {
            ldrae: LdraeConfig {
                channels: 8,
                frame_channels: 1,
                enc_blocks: 1,
                dec_blocks: 1,
                dec_channels: 0,
            },
            stages: 2,
            muna: MunaConfig {
                heads: 2,
                ..Default::default()
            },
            flow: FlowConfig::Zero,
            rp_blocks: 1,
        }
    }

    fn rand_t(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen()).collect())
    }

    fn rand_clip(seed: u64, frames: usize, h: usize, w: usize) -> RawClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RawClip::new(
            (0..frames).map(|_| (0..h * w).map(|_| rng.gen()).collect()).collect(),
            h,
            w,
            Colorspace::Gray,
            Fps::default(),
        )
        .unwrap()
    }

    fn model(cfg: CrdsConfig, seed: u64) -> (ParamStore, Crds) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Crds::new(cfg, &mut store, &mut rng).unwrap();
        (store, m)
    }

    #[test]
    fn fresh_network_is_identity() {
        let (store, m) = model(micro_config(), 0);
        let clip = rand_clip(1, 3, 12, 10);
        let (out, trace) = crds_forward(&store, &m, &clip, false).unwrap();
        assert_eq!(out, clip);
        assert_eq!(trace.latents.len(), 3);
        assert!(trace.latents[1].is_empty());
    }

    #[test]
    fn trace_identity_and_determinism() {
        let (mut store, m) = model(micro_config(), 2);
        perturb_params(&mut store, 0.05, 3);
        let clip = rand_clip(4, 3, 8, 8);
        let (a, ta) = crds_forward(&store, &m, &clip, true).unwrap();
        let (b, tb) = crds_forward(&store, &m, &clip, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.latents, tb.latents);
        for st in &ta.stages {
            for t in 0..3 {
                let sum = st.enhanced_residual[t].add(&st.predicted[t]).unwrap();
                assert_eq!(sum, ta.latents[st.stage - 1][t]);
                assert_eq!(sum.shape(), &[8, 8, 8]);
            }
        }
        let s0 = reconstruct_intermediate(&store, &m, &ta, 0).unwrap();
        let out: Vec<Vec<u8>> = s0.iter().map(Frame::to_u8).collect();
        assert_eq!(out, a.frames());
        assert!(reconstruct_intermediate(&store, &m, &ta, 3).is_err());
        let (_, short) = crds_forward(&store, &m, &clip, false).unwrap();
        assert!(reconstruct_intermediate(&store, &m, &short, 1).is_err());
    }

    #[test]
    fn identity_weights_make_blocks_no_ops() {
        let mut cfg = micro_config();
        cfg.muna.window = 1;
        let (mut store, m) = model(cfg, 5);
        let c = cfg.ldrae.channels;
        let eye = {
            let mut t = Tensor::zeros(&[c, c, 1, 1]);
            for i in 0..c {
                t.data_mut()[i * c + i] = 1.0;
            }
            t
        };
        let mut fuse = Tensor::zeros(&[c, 3 * c, 1, 1]);
        for i in 0..c {
            fuse.data_mut()[i * 3 * c + c + i] = 1.0;
        }
        let names: Vec<(ParamId, String)> = store.iter().map(|(id, n, _)| (id, n.to_string())).collect();
        for (id, name) in names {
            let v = store.value_mut(id);
            if name.contains("proj_") && name.ends_with(".w") {
                *v = eye.clone();
            } else if name.ends_with("fuse.w") && name.starts_with("stage") {
                *v = fuse.clone();
            } else if name.contains("fuse_block") && name.contains("conv2") {
                *v = Tensor::zeros(v.shape());
            }
        }
        let g = Graph::inference(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<Var> = (0..3).map(|_| g.constant(rand_t(&mut rng, &[c, 6, 6]))).collect();
        let vals: Vec<&Tensor> = xs.iter().map(Var::value).collect();
        let flows = FlowTable::estimate(&vals, 1, &ZeroFlow).unwrap();
        for b in &m.blocks {
            let out = b.run(&g, &xs, &flows, false).unwrap();
            for (a, b) in out.next.iter().zip(&xs) {
                assert_eq!(a.value(), b.value());
            }
        }
    }

    #[test]
    fn propagation_reverses_under_swapped_directions() {
        let (mut store, m) = model(micro_config(), 7);
        perturb_params(&mut store, 0.05, 8);
        let rp = &m.blocks[0].rp;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq: Vec<Tensor> = (0..4).map(|_| rand_t(&mut rng, &[8, 5, 5])).collect();
        let run = |store: &ParamStore, seq: &[Tensor]| -> Vec<Tensor> {
            let g = Graph::inference(store);
            let v: Vec<Var> = seq.iter().map(|t| g.constant(t.clone())).collect();
            rp.run(&g, &v).unwrap().iter().map(|x| x.value().clone()).collect()
        };
        let out = run(&store, &seq);
        assert_eq!(out.len(), 4);
        assert_eq!(run(&store, &seq[..1])[0].shape(), &[8, 5, 5]);

        let mut swapped = store.clone();
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names.iter().filter(|n| n.starts_with("stage1.rp.fwd")) {
            let other = name.replacen(".fwd", ".bwd", 1);
            let (a, b) = (swapped.id(name).unwrap(), swapped.id(&other).unwrap());
            let (va, vb) = (store.value(a).clone(), store.value(b).clone());
            *swapped.value_mut(a) = vb;
            *swapped.value_mut(b) = va;
        }
        // the head sees [h, g]; swapping directions swaps its input halves
        let hid = swapped.id("stage1.rp.head_in.w").unwrap();
        let w = store.value(hid).clone();
        let mut sw = w.clone();
        let (co, ci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let half = ci / 2;
        for o in 0..co {
            for i in 0..ci {
                let j = (i + half) % ci;
                for p in 0..k * k {
                    sw.data_mut()[(o * ci + j) * k * k + p] = w.data()[(o * ci + i) * k * k + p];
                }
            }
        }
        *swapped.value_mut(hid) = sw;
        let rev: Vec<Tensor> = seq.iter().rev().cloned().collect();
        let out_rev = run(&swapped, &rev);
        for (a, b) in out_rev.iter().rev().zip(&out) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        let g = Graph::inference(&store);
        assert!(rp.run(&g, &[]).is_err());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let (mut store, m) = model(micro_config(), 10);
        perturb_params(&mut store, 0.05, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let lq: Vec<Tensor> = (0..2).map(|_| rand_t(&mut rng, &[1, 8, 8])).collect();
        let gt: Vec<Tensor> = (0..2).map(|_| rand_t(&mut rng, &[1, 8, 8])).collect();
        let report = check_gradients(
            &store,
            |g| {
                let x: Vec<Var> = lq.iter().map(|t| g.constant(t.clone())).collect();
                let fv = m.forward_vars(g, &x, &ZeroFlow, false).unwrap();
                let out = m.reconstruct_var(g, &x, &fv, 0).unwrap();
                let mid = m.reconstruct_var(g, &x, &fv, 1).unwrap();
                let mut terms = Vec::new();
                for t in 0..2 {
                    terms.push(g.charbonnier(&out[t], &gt[t], 1e-3));
                    terms.push(g.mse(&mid[t], &gt[t], 1.0));
                }
                let refs: Vec<(&Var, f64)> = terms.iter().map(|t| (t, 1.0)).collect();
                g.weighted_sum(&refs)
            },
            1e-6,
            6,
            0,
        );
        assert!(report.max_rel_error() < 1e-3, "{:?}", report.worst());
    }
}
