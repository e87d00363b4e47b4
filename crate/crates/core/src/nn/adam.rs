use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment state.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Adam {
            config,
            moments: vec![None; store.len()],
        }
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.0).and_then(Option::as_ref)
    }

    pub fn set_moments(&mut self, id: ParamId, m: Moments) {
        self.moments[id.0] = Some(m);
    }

    /// One update of every parameter that received a gradient and is trainable.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: impl Fn(ParamId) -> f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (id, g) in grads {
            if !store.get(*id).trainable {
                continue;
            }
            let st = self.moments[id.0].get_or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
                steps: 0,
            });
            st.steps += 1;
            let bc1 = 1.0 - beta1.powi(st.steps as i32);
            let bc2 = 1.0 - beta2.powi(st.steps as i32);
            let rate = lr(*id);
            let p = store.value_mut(*id).data_mut();
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        }
    }
}

/// Cosine annealing from `base` at `iter = 0` to `min` at `iter = total`.
pub fn cosine_lr(base: f64, min: f64, iter: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (iter.min(total)) as f64 / total as f64;
    min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 1e-7, 0, 100), 1e-3);
        assert!((cosine_lr(1e-3, 1e-7, 100, 100) - 1e-7).abs() < 1e-18);
        assert!((cosine_lr(1.0, 0.0, 50, 100) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic_and_skips_frozen() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_vec(&[2], vec![3.0, -2.0]));
        let b = store.add("b", Tensor::from_vec(&[1], vec![5.0]));
        store.set_trainable("b", false);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        for _ in 0..2000 {
            let ga = store.value(a).scale(2.0);
            let gb = store.value(b).scale(2.0);
            opt.step(&mut store, &[(a, ga), (b, gb)], |_| 0.05);
        }
        assert!(store.value(a).max_abs() < 1e-3);
        assert_eq!(store.value(b).data(), &[5.0]);
        assert!(opt.moments(b).is_none());
    }
}
