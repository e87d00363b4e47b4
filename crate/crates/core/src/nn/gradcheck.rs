//! Central finite-difference checks of parameter gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)` over the
    /// checked entries; 0 when both vanish.
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compare analytic gradients of `loss` against central differences with
/// step `h`, for every trainable parameter and at most `per_tensor` entries
/// of each (chosen with `seed`).
pub fn check_gradients(
    store: &ParamStore,
    loss: impl Fn(&Graph) -> Var,
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> GradCheckReport {
    let g = Graph::new(store);
    let l = loss(&g);
    let grads = g.backward(&l);
    drop(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |s: &ParamStore| {
        let g = Graph::inference(s);
        loss(&g).item()
    };
    let mut tensors = Vec::new();
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.get(id).trainable).collect();
    let mut work = store.clone();
    for id in ids {
        let n = store.value(id).len();
        let analytic = grads.param(id).map(|t| t.into_data()).unwrap_or_else(|| vec![0.0; n]);
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_tensor).into_vec()
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let orig = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let lp = eval(&work);
            work.value_mut(id).data_mut()[i] = orig - h;
            let lm = eval(&work);
            work.value_mut(id).data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            diff += (analytic[i] - num).powi(2);
            na += analytic[i].powi(2);
            nn += num * num;
        }
        let denom = na.sqrt().max(nn.sqrt());
        let rel_error = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            entries: picks.len(),
            rel_error,
        });
    }
    GradCheckReport { tensors }
}

/// Add uniform noise in `[-scale, scale]` to every parameter so that
/// zero-initialized layers do not hide gradients.
pub fn perturb_params(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.gen_range(-scale..=scale);
        }
    }
}
