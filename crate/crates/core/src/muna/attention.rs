//! Flow-guided neighborhood attention kernel.
//!
//! For each query pixel `i` the neighborhood is the `w×w` window centred at
//! `i + round(flow(i))`, shifted (not shrunk) to lie inside the frame. Logits
//! are `q_i·k_j + B[h, j − c_i]` where `c_i` is the flow-shifted centre
//! clamped to the frame; weights are `softmax(logits / √d)`.

use serde::{Deserialize, Serialize};

use super::flow::FlowField;
use crate::error::{ensure_shape, Error, Result};
use crate::nn::{CustomBackward, Var};
use crate::tensor::Tensor;

/// How the attention weights are turned into a motion offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorMode {
    /// Attention-weighted mean offset.
    #[default]
    Soft,
    /// Offset of the most attended neighbour.
    Hard,
}

/// Window placement for every query position.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhoods {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    /// Top-left corner of each query's window, row-major over queries.
    pub start: Vec<(usize, usize)>,
    /// Flow-shifted centre clamped to the frame.
    pub anchor: Vec<(usize, usize)>,
    base: Vec<usize>,
    bias_base: Vec<usize>,
    rel: Vec<usize>,
    bias_rel: Vec<usize>,
}

impl Neighborhoods {
    pub fn new(flow: &FlowField, window: usize) -> Result<Self> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::InvalidInput(format!("window {window} must be odd")));
        }
        let (h, w) = flow.size();
        if window > h.min(w) {
            return Err(Error::InvalidInput(format!(
                "window {window} exceeds the {h}x{w} frame"
            )));
        }
        let r = (window / 2) as i64;
        let mut start = Vec::with_capacity(h * w);
        let mut anchor = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = flow.at(y, x);
                if !fy.is_finite() || !fx.is_finite() {
                    return Err(Error::InvalidInput("non-finite flow".into()));
                }
                let cy = y as i64 + fy.round() as i64;
                let cx = x as i64 + fx.round() as i64;
                start.push((
                    (cy - r).clamp(0, (h - window) as i64) as usize,
                    (cx - r).clamp(0, (w - window) as i64) as usize,
                ));
                anchor.push((cy.clamp(0, h as i64 - 1) as usize, cx.clamp(0, w as i64 - 1) as usize));
            }
        }
        let span = 2 * window - 1;
        let base = start.iter().map(|&(sy, sx)| sy * w + sx).collect();
        let bias_base = start
            .iter()
            .zip(&anchor)
            .map(|(&(sy, sx), &(ay, ax))| (sy + window - 1 - ay) * span + sx + window - 1 - ax)
            .collect();
        let rel = (0..window * window).map(|j| (j / window) * w + j % window).collect();
        let bias_rel = (0..window * window).map(|j| (j / window) * span + j % window).collect();
        Ok(Neighborhoods {
            height: h,
            width: w,
            window,
            start,
            anchor,
            base,
            bias_base,
            rel,
            bias_rel,
        })
    }

    pub fn k(&self) -> usize {
        self.window * self.window
    }

    /// Flat index of neighbour `j` of query `i`.
    #[inline]
    pub fn neighbor(&self, i: usize, j: usize) -> usize {
        self.base[i] + self.rel[j]
    }

    /// Bias-table index of neighbour `j` of query `i`.
    #[inline]
    pub fn bias_index(&self, i: usize, j: usize) -> usize {
        self.bias_base[i] + self.bias_rel[j]
    }

    /// `(dy, dx)` of neighbour `j` from the centre of query `i`'s window.
    #[inline]
    pub fn offset(&self, j: usize) -> (f64, f64) {
        let r = (self.window / 2) as f64;
        ((j / self.window) as f64 - r, (j % self.window) as f64 - r)
    }
}

/// Transpose `[C, HW]` to `[HW, C]`.
fn pixel_major(t: &Tensor) -> Vec<f64> {
    let (c, h, w) = t.chw();
    let hw = h * w;
    let src = t.data();
    let mut out = vec![0.0; c * hw];
    for ci in 0..c {
        for p in 0..hw {
            out[p * c + ci] = src[ci * hw + p];
        }
    }
    out
}

fn channel_major(v: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for p in 0..hw {
        for ci in 0..c {
            out[ci * hw + p] = v[p * c + ci];
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// Weighted values, heads concatenated: `[C, H, W]`.
    pub values: Tensor,
    /// Raw logits `q·k + B`, laid out `[heads][HW][k]`.
    pub logits: Vec<f64>,
    /// `softmax(logits / √d)` with the same layout.
    pub weights: Vec<f64>,
    /// `flow + Vector(A)`, averaged over heads: `[2, H, W]`.
    pub mv: Tensor,
    pub heads: usize,
    pub neighborhoods: Neighborhoods,
}

fn check_inputs(q: &Tensor, k: &Tensor, v: &Tensor, bias: &Tensor, nb: &Neighborhoods, heads: usize) -> Result<()> {
    ensure_shape!(q.shape().len() == 3, "query must be [C, H, W]");
    ensure_shape!(
        q.shape() == k.shape() && q.shape() == v.shape(),
        "q/k/v shapes {:?} {:?} {:?}",
        q.shape(),
        k.shape(),
        v.shape()
    );
    let (c, h, w) = q.chw();
    ensure_shape!(
        (h, w) == (nb.height, nb.width),
        "flow {}x{} vs features {h}x{w}",
        nb.height,
        nb.width
    );
    if heads == 0 || c % heads != 0 {
        return Err(Error::InvalidInput(format!(
            "{c} channels cannot split into {heads} heads"
        )));
    }
    let span = 2 * nb.window - 1;
    ensure_shape!(
        bias.shape() == [heads, span * span],
        "bias table {:?}, expected [{heads}, {}]",
        bias.shape(),
        span * span
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: &Tensor,
    flow: &FlowField,
    window: usize,
    heads: usize,
    mode: VectorMode,
) -> Result<AttentionOutput> {
    let nb = Neighborhoods::new(flow, window)?;
    check_inputs(q, k, v, bias, &nb, heads)?;
    let (c, h, w) = q.chw();
    let hw = h * w;
    let d = c / heads;
    let kn = nb.k();
    let scale = 1.0 / (d as f64).sqrt();
    let (qt, kt, vt) = (pixel_major(q), pixel_major(k), pixel_major(v));
    let mut logits = vec![0.0; heads * hw * kn];
    let mut weights = vec![0.0; heads * hw * kn];
    let mut out = vec![0.0; hw * c];
    let mut mv = Tensor::zeros(&[2, h, w]);
    let b = bias.data();
    let offs: Vec<(f64, f64)> = (0..kn).map(|j| nb.offset(j)).collect();
    for head in 0..heads {
        let span = head * d..(head + 1) * d;
        let btab = &b[head * (2 * window - 1).pow(2)..];
        for i in 0..hw {
            let row = (head * hw + i) * kn;
            let qi = &qt[i * c + span.start..i * c + span.end];
            let mut max = f64::NEG_INFINITY;
            for j in 0..kn {
                let n = nb.neighbor(i, j);
                let kj = &kt[n * c + span.start..n * c + span.end];
                let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                let l = dot + btab[nb.bias_index(i, j)];
                logits[row + j] = l;
                max = max.max(l * scale);
            }
            let mut z = 0.0;
            for j in 0..kn {
                let e = (logits[row + j] * scale - max).exp();
                weights[row + j] = e;
                z += e;
            }
            let (mut vy, mut vx) = (0.0, 0.0);
            let mut best = 0;
            for j in 0..kn {
                let p = weights[row + j] / z;
                weights[row + j] = p;
                if p > weights[row + best] {
                    best = j;
                }
                let n = nb.neighbor(i, j);
                let vj = &vt[n * c + span.start..n * c + span.end];
                let oi = &mut out[i * c + span.start..i * c + span.end];
                for (o, x) in oi.iter_mut().zip(vj) {
                    *o += p * x;
                }
                let (oy, ox) = offs[j];
                vy += p * oy;
                vx += p * ox;
            }
            if mode == VectorMode::Hard {
                (vy, vx) = nb.offset(best);
            }
            let (y, x) = (i / w, i % w);
            let m = mv.data_mut();
            m[y * w + x] += vy / heads as f64;
            m[hw + y * w + x] += vx / heads as f64;
        }
    }
    let f = flow.tensor().data();
    for (m, fl) in mv.data_mut().iter_mut().zip(f) {
        *m += fl;
    }
    Ok(AttentionOutput {
        values: Tensor::from_vec(&[c, h, w], channel_major(&out, c, h, w)),
        logits,
        weights,
        mv,
        heads,
        neighborhoods: nb,
    })
}

struct AttentionBackward {
    q: Var,
    k: Var,
    v: Var,
    weights: Vec<f64>,
    nb: Neighborhoods,
    heads: usize,
    bias_len: usize,
}

impl CustomBackward for AttentionBackward {
    fn backward(&self, dout: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, h, w) = self.q.value().chw();
        let hw = h * w;
        let heads = self.heads;
        let d = c / heads;
        let kn = self.nb.k();
        let scale = 1.0 / (d as f64).sqrt();
        let qt = pixel_major(self.q.value());
        let kt = pixel_major(self.k.value());
        let vt = pixel_major(self.v.value());
        let dt = pixel_major(&Tensor::from_vec(&[c, h, w], dout.to_vec()));
        let mut dq = vec![0.0; hw * c];
        let mut dk = vec![0.0; hw * c];
        let mut dv = vec![0.0; hw * c];
        let mut db = vec![0.0; self.bias_len];
        let per_head = self.bias_len / heads;
        let mut dp = vec![0.0; kn];
        for head in 0..heads {
            let (lo, hi) = (head * d, (head + 1) * d);
            for i in 0..hw {
                let row = (head * hw + i) * kn;
                let p = &self.weights[row..row + kn];
                let doi = &dt[i * c + lo..i * c + hi];
                let mut dot = 0.0;
                for j in 0..kn {
                    let n = self.nb.neighbor(i, j);
                    let vj = &vt[n * c + lo..n * c + hi];
                    dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += p[j] * dp[j];
                    for (g, x) in dv[n * c + lo..n * c + hi].iter_mut().zip(doi) {
                        *g += p[j] * x;
                    }
                }
                for j in 0..kn {
                    // gradient with respect to the unscaled logit q·k + B
                    let dl = p[j] * (dp[j] - dot) * scale;
                    if dl == 0.0 {
                        continue;
                    }
                    let n = self.nb.neighbor(i, j);
                    db[head * per_head + self.nb.bias_index(i, j)] += dl;
                    for ch in lo..hi {
                        dq[i * c + ch] += dl * kt[n * c + ch];
                        dk[n * c + ch] += dl * qt[i * c + ch];
                    }
                }
            }
        }
        let cm = |v: Vec<f64>| channel_major(&v, c, h, w);
        vec![
            need[0].then(|| cm(dq)),
            need[1].then(|| cm(dk)),
            need[2].then(|| cm(dv)),
            need[3].then_some(db),
        ]
    }
}

/// Attention on graph variables. Returns the weighted values (recorded for
/// backward) together with the full forward result.
#[allow(clippy::too_many_arguments)]
pub fn attention_var(
    g: &crate::nn::Graph,
    q: &Var,
    k: &Var,
    v: &Var,
    bias: &Var,
    flow: &FlowField,
    window: usize,
    heads: usize,
    mode: VectorMode,
) -> Result<(Var, AttentionOutput)> {
    let res = attention_forward(q.value(), k.value(), v.value(), bias.value(), flow, window, heads, mode)?;
    let back = AttentionBackward {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        weights: if g.is_recording() {
            res.weights.clone()
        } else {
            Vec::new()
        },
        nb: res.neighborhoods.clone(),
        heads,
        bias_len: bias.value().len(),
    };
    let out = g.custom(res.values.clone(), &[q, k, v, bias], Box::new(back));
    Ok((out, res))
}
