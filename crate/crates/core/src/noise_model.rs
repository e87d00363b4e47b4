//! The quantization-noise ladder: α/β schedules, hybrid targets and the
//! code-space degradation operator.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::media_io::Frame;
use crate::tensor::Tensor;

/// `alphas[s]` for `s = 0..=N` and `betas[s - 1] = alphas[s] - alphas[s - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of noise increments `N`.
    pub fn levels(&self) -> usize {
        self.betas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha(&self, s: usize) -> Result<f64> {
        self.alphas
            .get(s)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("noise level {s} outside 0..={}", self.levels())))
    }

    /// `β_s` for `s = 1..=N`.
    pub fn beta(&self, s: usize) -> Result<f64> {
        if s == 0 || s > self.levels() {
            return Err(Error::InvalidInput(format!(
                "β index {s} outside 1..={}",
                self.levels()
            )));
        }
        Ok(self.betas[s - 1])
    }
}

/// Uniform ladder `α_s = s / N`.
pub fn make_schedule(n: usize) -> Result<NoiseSchedule> {
    if n < 1 {
        return Err(Error::InvalidInput("schedule needs at least one level".into()));
    }
    let alphas: Vec<f64> = (0..=n).map(|s| s as f64 / n as f64).collect();
    let betas = alphas.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(NoiseSchedule { alphas, betas })
}

/// `α·x̂ + (1 − α)·x`
pub fn hybrid_tensor(x: &Tensor, x_hat: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("α = {alpha} outside [0, 1]")));
    }
    x.zip_map(x_hat, |a, b| alpha * b + (1.0 - alpha) * a)
}

/// Partially degraded frame between the original `x` and compressed `x_hat`.
pub fn hybrid_target(x: &Frame, x_hat: &Frame, alpha: f64) -> Result<Frame> {
    Ok(Frame(hybrid_tensor(x.tensor(), x_hat.tensor(), alpha)?))
}

/// `D(x, s) = x + α_s·η` on code-space coefficients.
pub fn degrade(x: &[f64], s: usize, eta: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    ensure_shape!(x.len() == eta.len(), "coefficients {} vs noise {}", x.len(), eta.len());
    let a = sched.alpha(s)?;
    Ok(x.iter().zip(eta).map(|(c, e)| c + a * e).collect())
}

/// `d(x, s) = D(x, s) − D(x, s − 1)` for `s = 1..=N`.
pub fn increment(x: &[f64], s: usize, eta: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.beta(s)?;
    let hi = degrade(x, s, eta, sched)?;
    let lo = degrade(x, s - 1, eta, sched)?;
    Ok(hi.iter().zip(&lo).map(|(a, b)| a - b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityStats {
    pub count: usize,
    pub qstep: f64,
    pub mean: f64,
    pub variance: f64,
    /// Variance of Uniform(−Δ/2, Δ/2): Δ²/12.
    pub uniform_variance: f64,
    pub max_abs: f64,
    /// Kolmogorov–Smirnov distance to Uniform(−Δ/2, Δ/2).
    pub ks_distance: f64,
}

pub fn uniformity_stats(samples: &[f64], qstep: f64) -> Result<UniformityStats> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    if qstep <= 0.0 {
        return Err(Error::InvalidInput("quantizer step must be positive".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max_abs = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cdf = |v: f64| ((v + qstep / 2.0) / qstep).clamp(0.0, 1.0);
    let mut ks = 0.0f64;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        ks = ks.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(UniformityStats {
        count: samples.len(),
        qstep,
        mean,
        variance,
        uniform_variance: qstep * qstep / 12.0,
        max_abs,
        ks_distance: ks,
    })
}
