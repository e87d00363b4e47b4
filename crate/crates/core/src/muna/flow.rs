//! Flow fields and pluggable flow estimators.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Result};
use crate::tensor::Tensor;
use crate::toy_codec::{search_block, BlockRect};

/// Per-pixel `(dy, dx)` offsets `[2, H, W]` from the current frame into a
/// reference: `ref(i + flow(i)) ≈ cur(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(pub Tensor);

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField(Tensor::zeros(&[2, h, w]))
    }

    pub fn uniform(h: usize, w: usize, dy: f64, dx: f64) -> Self {
        let mut t = Tensor::zeros(&[2, h, w]);
        t.plane_mut(0).fill(dy);
        t.plane_mut(1).fill(dx);
        FlowField(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.0.chw();
        (h, w)
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        (self.0.at3(0, y, x), self.0.at3(1, y, x))
    }

    /// Mean `(dy, dx)` over all pixels.
    pub fn mean(&self) -> (f64, f64) {
        let n = self.0.plane(0).len() as f64;
        (
            self.0.plane(0).iter().sum::<f64>() / n,
            self.0.plane(1).iter().sum::<f64>() / n,
        )
    }
}

/// Anything that maps a pair of equally sized feature maps to a flow field.
pub trait FlowEstimator {
    fn estimate(&self, cur: &Tensor, reference: &Tensor) -> Result<FlowField>;
}

/// Integer block matching: exhaustive SAD search per block, broadcast to
/// every pixel of the block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMatchFlow {
    pub block: usize,
    pub range: usize,
}

impl Default for BlockMatchFlow {
    fn default() -> Self {
        BlockMatchFlow { block: 8, range: 4 }
    }
}

impl FlowEstimator for BlockMatchFlow {
    fn estimate(&self, cur: &Tensor, reference: &Tensor) -> Result<FlowField> {
        ensure_shape!(
            cur.shape() == reference.shape(),
            "flow inputs {:?} vs {:?}",
            cur.shape(),
            reference.shape()
        );
        ensure_shape!(cur.shape().len() == 3, "flow input must be [C, H, W]");
        let (_, h, w) = cur.chw();
        let b = self.block.max(1);
        let mut out = Tensor::zeros(&[2, h, w]);
        for by in (0..h).step_by(b) {
            for bx in (0..w).step_by(b) {
                let rect = BlockRect {
                    y: by,
                    x: bx,
                    h: b.min(h - by),
                    w: b.min(w - bx),
                };
                let ((dy, dx), _) = search_block(cur, reference, rect, self.range);
                for y in by..by + rect.h {
                    for x in bx..bx + rect.w {
                        out.set3(0, y, x, dy as f64);
                        out.set3(1, y, x, dx as f64);
                    }
                }
            }
        }
        Ok(FlowField(out))
    }
}

/// Always zero; attention then searches around co-located positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ZeroFlow;

impl FlowEstimator for ZeroFlow {
    fn estimate(&self, cur: &Tensor, reference: &Tensor) -> Result<FlowField> {
        ensure_shape!(
            cur.shape() == reference.shape(),
            "flow inputs {:?} vs {:?}",
            cur.shape(),
            reference.shape()
        );
        let (_, h, w) = cur.chw();
        Ok(FlowField::zeros(h, w))
    }
}

/// Flows from every frame to each of its `2·radius + 1` references
/// (clamped to the clip), estimated once and shared by all stages.
#[derive(Clone, Debug)]
pub struct FlowTable {
    pub radius: usize,
    /// `fields[t][m + radius]`; the `m = 0` entry is zero.
    pub fields: Vec<Vec<FlowField>>,
}

impl FlowTable {
    pub fn estimate(frames: &[&Tensor], radius: usize, est: &dyn FlowEstimator) -> Result<Self> {
        let n = frames.len() as i64;
        let r = radius as i64;
        let fields = (0..n)
            .map(|t| {
                (-r..=r)
                    .map(|m| {
                        let (_, h, w) = frames[t as usize].chw();
                        if m == 0 {
                            return Ok(FlowField::zeros(h, w));
                        }
                        let rf = (t + m).clamp(0, n - 1) as usize;
                        est.estimate(frames[t as usize], frames[rf])
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(FlowTable { radius, fields })
    }

    pub fn frames(&self) -> usize {
        self.fields.len()
    }

    /// Flow from frame `t` to reference `t + m`.
    pub fn get(&self, t: usize, m: i64) -> &FlowField {
        &self.fields[t][(m + self.radius as i64) as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowConfig {
    BlockMatch { block: usize, range: usize },
    Zero,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let d = BlockMatchFlow::default();
        FlowConfig::BlockMatch {
            block: d.block,
            range: d.range,
        }
    }
}

impl FlowConfig {
    pub fn estimator(&self) -> Box<dyn FlowEstimator> {
        match *self {
            FlowConfig::BlockMatch { block, range } => Box::new(BlockMatchFlow { block, range }),
            FlowConfig::Zero => Box::new(ZeroFlow),
        }
    }
}

/// Flow from `cur` to `reference` with the default block-matching estimator.
pub fn estimate_flow(cur: &Tensor, reference: &Tensor) -> Result<FlowField> {
    BlockMatchFlow::default().estimate(cur, reference)
}
