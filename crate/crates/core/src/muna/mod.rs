//! Mutual neighborhood attention: flow-guided local attention that both
//! estimates motion (ME) and warps reference features by attention-weighted
//! averaging (AGP), followed by prediction fusion and residual extraction.

mod attention;
mod flow;

pub use attention::{attention_forward, attention_var, AttentionOutput, Neighborhoods, VectorMode};
pub use flow::{estimate_flow, BlockMatchFlow, FlowConfig, FlowEstimator, FlowField, FlowTable, ZeroFlow};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::ldr_ae::LatentMap;
use crate::nn::{run_blocks, Conv2d, Graph, Init, ParamId, ParamStore, ResBlock, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MunaConfig {
    /// Odd window side; `k = window²` neighbours.
    pub window: usize,
    /// References `t − m_w ..= t + m_w`.
    pub temporal_radius: usize,
    pub heads: usize,
    pub fusion_blocks: usize,
    pub vector: VectorMode,
}

impl Default for MunaConfig {
    fn default() -> Self {
        MunaConfig {
            window: 3,
            temporal_radius: 1,
            heads: 4,
            fusion_blocks: 1,
            vector: VectorMode::Soft,
        }
    }
}

impl MunaConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidInput(format!("window {} must be odd", self.window)));
        }
        if self.heads == 0 || channels % self.heads != 0 {
            return Err(Error::InvalidInput(format!(
                "{channels} channels cannot split into {} heads",
                self.heads
            )));
        }
        Ok(())
    }

    pub fn references(&self) -> usize {
        2 * self.temporal_radius + 1
    }
}

/// Parameter handles of one MuNA unit.
#[derive(Clone, Debug)]
pub struct MunaWeights {
    pub config: MunaConfig,
    pub channels: usize,
    pub proj_q: Conv2d,
    pub proj_k: Conv2d,
    pub proj_v: Conv2d,
    pub proj_out: Conv2d,
    /// `[heads, (2w − 1)²]` relative-position bias.
    pub bias: ParamId,
    pub fuse: Conv2d,
    pub fuse_blocks: Vec<ResBlock>,
}

impl MunaWeights {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        channels: usize,
        config: MunaConfig,
    ) -> Result<Self> {
        config.validate(channels)?;
        let c = channels;
        let proj = |store: &mut ParamStore, rng: &mut _, n: &str, bias: bool| {
            Conv2d::new(
                store,
                rng,
                &format!("{prefix}.{n}"),
                c,
                c,
                1,
                bias,
                Init::Kaiming { scale: 1.0 },
            )
        };
        let proj_q = proj(store, rng, "proj_q", false);
        let proj_k = proj(store, rng, "proj_k", false);
        let proj_v = proj(store, rng, "proj_v", false);
        let proj_out = proj(store, rng, "proj_out", true);
        let span = 2 * config.window - 1;
        let bias = store.add_init(
            &format!("{prefix}.rel_bias"),
            &[config.heads, span * span],
            Init::Zero,
            rng,
        );
        let fuse = Conv2d::new(
            store,
            rng,
            &format!("{prefix}.fuse"),
            config.references() * c,
            c,
            1,
            true,
            Init::Kaiming { scale: 1.0 },
        );
        let fuse_blocks = (0..config.fusion_blocks)
            .map(|i| ResBlock::new(store, rng, &format!("{prefix}.fuse_block{i}"), c))
            .collect();
        Ok(MunaWeights {
            config,
            channels,
            proj_q,
            proj_k,
            proj_v,
            proj_out,
            bias,
            fuse,
            fuse_blocks,
        })
    }

    fn check_latent(&self, v: &Var) -> Result<()> {
        ensure_shape!(
            v.shape().len() == 3 && v.shape()[0] == self.channels,
            "expected [{}, H, W] latent, got {:?}",
            self.channels,
            v.shape()
        );
        Ok(())
    }

    /// Attend from projected queries of the current frame to projected
    /// keys/values of a reference; returns the output-projected prediction.
    pub fn align(&self, g: &Graph, q: &Var, k: &Var, v: &Var, flow: &FlowField) -> Result<(Var, AttentionOutput)> {
        let bias = g.param(self.bias);
        let (vals, res) = attention_var(
            g,
            q,
            k,
            v,
            &bias,
            flow,
            self.config.window,
            self.config.heads,
            self.config.vector,
        )?;
        Ok((self.proj_out.forward(g, &vals), res))
    }

    /// Channel concatenation of the `2·m_w + 1` predictions, a 1×1 merge and
    /// residual refinement.
    pub fn fuse(&self, g: &Graph, preds: &[Var]) -> Result<Var> {
        if preds.len() != self.config.references() {
            return Err(Error::InvalidInput(format!(
                "fusion expects {} predictions, got {}",
                self.config.references(),
                preds.len()
            )));
        }
        for p in preds {
            self.check_latent(p)?;
        }
        let refs: Vec<&Var> = preds.iter().collect();
        let h = self.fuse.forward(g, &g.concat(&refs));
        Ok(run_blocks(&self.fuse_blocks, g, h))
    }

    /// Predictions `x̄_t` for every frame of a latent sequence. References
    /// beyond the clip are clamped to its ends; the `m = 0` reference is the
    /// current frame with zero flow.
    pub fn predict_sequence(
        &self,
        g: &Graph,
        latents: &[Var],
        flows: &FlowTable,
        keep_mv: bool,
    ) -> Result<Vec<(Var, Vec<Tensor>)>> {
        for l in latents {
            self.check_latent(l)?;
        }
        if flows.frames() != latents.len() || flows.radius != self.config.temporal_radius {
            return Err(Error::InvalidInput(format!(
                "flow table covers {} frames at radius {}, sequence has {} at radius {}",
                flows.frames(),
                flows.radius,
                latents.len(),
                self.config.temporal_radius
            )));
        }
        let qs: Vec<Var> = latents.iter().map(|x| self.proj_q.forward(g, x)).collect();
        let ks: Vec<Var> = latents.iter().map(|x| self.proj_k.forward(g, x)).collect();
        let vs: Vec<Var> = latents.iter().map(|x| self.proj_v.forward(g, x)).collect();
        let n = latents.len() as i64;
        let mw = self.config.temporal_radius as i64;
        let mut out = Vec::with_capacity(latents.len());
        for t in 0..latents.len() {
            let mut preds = Vec::with_capacity(self.config.references());
            let mut mvs = Vec::new();
            for m in -mw..=mw {
                let r = (t as i64 + m).clamp(0, n - 1) as usize;
                let (p, res) = self.align(g, &qs[t], &ks[r], &vs[r], flows.get(t, m))?;
                preds.push(p);
                if keep_mv {
                    mvs.push(res.mv);
                }
            }
            out.push((self.fuse(g, &preds)?, mvs));
        }
        Ok(out)
    }
}

/// Motion estimation between two latents; `AttentionOutput::mv` holds
/// `flow + Vector(A)`.
pub fn muna_me(
    store: &ParamStore,
    w: &MunaWeights,
    h_t: &LatentMap,
    h_ref: &LatentMap,
    flow: &FlowField,
) -> Result<AttentionOutput> {
    let g = Graph::inference(store);
    let q = w.proj_q.forward(&g, &g.constant(h_t.0.clone()));
    let k = w.proj_k.forward(&g, &g.constant(h_ref.0.clone()));
    let v = w.proj_v.forward(&g, &g.constant(h_ref.0.clone()));
    attention_forward(
        q.value(),
        k.value(),
        v.value(),
        store.value(w.bias),
        flow,
        w.config.window,
        w.config.heads,
        w.config.vector,
    )
}

/// Attention-guided prediction: the attention-weighted average of projected
/// reference values, heads concatenated, then output-projected.
pub fn muna_agp(store: &ParamStore, w: &MunaWeights, att: &AttentionOutput, h_ref: &LatentMap) -> Result<LatentMap> {
    let g = Graph::inference(store);
    let v = w.proj_v.forward(&g, &g.constant(h_ref.0.clone()));
    let (c, h, wd) = v.value().chw();
    let nb = &att.neighborhoods;
    ensure_shape!(
        (h, wd) == (nb.height, nb.width),
        "attention geometry {}x{} vs reference {h}x{wd}",
        nb.height,
        nb.width
    );
    let heads = att.heads;
    let d = c / heads;
    let hw = h * wd;
    let kn = nb.k();
    let vd = v.value().data();
    let mut out = vec![0.0; c * hw];
    for head in 0..heads {
        for i in 0..hw {
            let row = (head * hw + i) * kn;
            for j in 0..kn {
                let p = att.weights[row + j];
                let n = nb.neighbor(i, j);
                for ch in head * d..(head + 1) * d {
                    out[ch * hw + i] += p * vd[ch * hw + n];
                }
            }
        }
    }
    let y = w.proj_out.forward(&g, &g.constant(Tensor::from_vec(&[c, h, wd], out)));
    Ok(LatentMap(y.value().clone()))
}

/// Fuse the `2·m_w + 1` per-reference predictions into `x̄`.
pub fn fuse_predictions(store: &ParamStore, w: &MunaWeights, preds: &[LatentMap]) -> Result<LatentMap> {
    let g = Graph::inference(store);
    let vars: Vec<Var> = preds.iter().map(|p| g.constant(p.0.clone())).collect();
    Ok(LatentMap(w.fuse(&g, &vars)?.value().clone()))
}

/// `r = x − x̄`
pub fn extract_residual(x: &LatentMap, x_bar: &LatentMap) -> Result<LatentMap> {
    Ok(LatentMap(x.0.sub(&x_bar.0)?))
}
