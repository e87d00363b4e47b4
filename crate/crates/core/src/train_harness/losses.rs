use crate::error::{ensure_shape, Error, Result};
use crate::media_io::Frame;
use crate::nn::{charbonnier_value, Graph, ParamStore, Var};
use crate::noise_model::{hybrid_tensor, NoiseSchedule};
use crate::pdis_net::{Crds, ForwardTrace, ForwardVars};
use crate::tensor::Tensor;

/// `mean(sqrt((a − b)² + eps²))`
pub fn charbonnier(a: &Tensor, b: &Tensor, eps: f64) -> Result<f64> {
    ensure_shape!(a.shape() == b.shape(), "{:?} vs {:?}", a.shape(), b.shape());
    if eps <= 0.0 {
        return Err(Error::InvalidInput("charbonnier eps must be positive".into()));
    }
    Ok(charbonnier_value(a.data(), b.data(), eps))
}

/// Charbonnier over every sample of every frame.
pub fn main_loss(enhanced: &[Frame], gt: &[Frame], eps: f64) -> Result<f64> {
    ensure_shape!(
        enhanced.len() == gt.len() && !gt.is_empty(),
        "{} vs {} frames",
        enhanced.len(),
        gt.len()
    );
    let mut total = 0.0;
    for (e, g) in enhanced.iter().zip(gt) {
        total += charbonnier(e.tensor(), g.tensor(), eps)?;
    }
    Ok(total / gt.len() as f64)
}

pub fn main_loss_var(g: &Graph, recon: &[Var], gt: &[Tensor], eps: f64) -> Var {
    let terms: Vec<Var> = recon.iter().zip(gt).map(|(r, t)| g.charbonnier(r, t, eps)).collect();
    let w = 1.0 / terms.len() as f64;
    g.weighted_sum(&terms.iter().map(|t| (t, w)).collect::<Vec<_>>())
}

/// `hybrids[s][t] = α_s·x̂_t + (1 − α_s)·x_t` for `s = 0..=N`.
pub fn hybrid_ladder(gt: &[Tensor], lq: &[Tensor], sched: &NoiseSchedule) -> Result<Vec<Vec<Tensor>>> {
    ensure_shape!(gt.len() == lq.len(), "{} gt vs {} lq frames", gt.len(), lq.len());
    sched
        .alphas()
        .iter()
        .map(|&a| gt.iter().zip(lq).map(|(x, xh)| hybrid_tensor(x, xh, a)).collect())
        .collect()
}

fn check_ladder(model: &Crds, hybrids: &[Vec<Tensor>], sched: &NoiseSchedule) -> Result<()> {
    let n = model.stages();
    if sched.levels() != n || hybrids.len() != n + 1 {
        return Err(Error::InvalidInput(format!(
            "network has {n} stages but the schedule has {} levels and {} hybrid sets",
            sched.levels(),
            hybrids.len()
        )));
    }
    Ok(())
}

/// `Σ_{s=1}^{N−1} Σ_t mse(x̂_t + D(x^{l,N}_t, x^{l,s}_t), x̂^s_t)` on the graph.
pub fn intermediate_loss_var(
    g: &Graph,
    model: &Crds,
    lq: &[Var],
    fv: &ForwardVars,
    hybrids: &[Vec<Tensor>],
    sched: &NoiseSchedule,
) -> Result<Var> {
    check_ladder(model, hybrids, sched)?;
    let mut terms = Vec::new();
    for (s, targets) in hybrids.iter().enumerate().take(model.stages()).skip(1) {
        let recon = model.reconstruct_var(g, lq, fv, s)?;
        ensure_shape!(
            recon.len() == targets.len(),
            "{} frames vs {} targets",
            recon.len(),
            targets.len()
        );
        for (r, t) in recon.iter().zip(targets) {
            terms.push(g.mse(r, t, 1.0));
        }
    }
    Ok(g.weighted_sum(&terms.iter().map(|t| (t, 1.0)).collect::<Vec<_>>()))
}

/// Intermediate loss of a kept trace (unclipped reconstructions).
pub fn intermediate_loss(
    store: &ParamStore,
    model: &Crds,
    trace: &ForwardTrace,
    hybrids: &[Vec<Tensor>],
    sched: &NoiseSchedule,
) -> Result<f64> {
    check_ladder(model, hybrids, sched)?;
    if !trace.kept {
        return Err(Error::InvalidInput("intermediate loss needs a kept trace".into()));
    }
    let g = Graph::inference(store);
    let lq: Vec<Var> = trace.lq.iter().map(|t| g.constant(t.clone())).collect();
    let fv = ForwardVars {
        latents: trace
            .latents
            .iter()
            .map(|l| l.iter().map(|t| g.constant(t.clone())).collect())
            .collect(),
        correction: Vec::new(),
        stages: Vec::new(),
    };
    Ok(intermediate_loss_var(&g, model, &lq, &fv, hybrids, sched)?.item())
}
