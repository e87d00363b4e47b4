use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredMode {
    #[serde(rename = "INTRA_DC")]
    IntraDc,
    #[serde(rename = "INTER")]
    Inter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMotion {
    /// `(row, col)` in block units.
    pub block_index: (usize, usize),
    /// `(dy, dx)` in integer pixels, pointing into the reference.
    pub mv: (i32, i32),
    pub mode: PredMode,
    pub sad: f64,
}

/// Rectangle of a block in pixel coordinates; edge blocks may be smaller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn sad_at(cur: &Tensor, reference: &Tensor, r: BlockRect, dy: i32, dx: i32) -> f64 {
    let (c, h, w) = cur.chw();
    let (cd, rd) = (cur.data(), reference.data());
    let mut sad = 0.0;
    for ci in 0..c {
        for y in 0..r.h {
            let cy = r.y + y;
            let ry = (cy as i32 + dy) as usize;
            let crow = (ci * h + cy) * w + r.x;
            let rrow = (ci * h + ry) * w + (r.x as i32 + dx) as usize;
            for x in 0..r.w {
                sad += (cd[crow + x] - rd[rrow + x]).abs();
            }
        }
    }
    sad
}

/// Exhaustive SAD search over `[-range, range]^2`, restricted to displacements
/// that keep the block inside the reference. Ties go to the smallest
/// `|dy| + |dx|`, then to the first candidate in row-major order.
///
/// Returns `((dy, dx), sad)`.
pub fn search_block(cur: &Tensor, reference: &Tensor, r: BlockRect, range: usize) -> ((i32, i32), f64) {
    assert_eq!(cur.shape(), reference.shape(), "reference geometry differs");
    let (_, h, w) = cur.chw();
    let range = range as i32;
    let dy_lo = (-range).max(-(r.y as i32));
    let dy_hi = range.min((h - r.y - r.h) as i32);
    let dx_lo = (-range).max(-(r.x as i32));
    let dx_hi = range.min((w - r.x - r.w) as i32);
    let mut best = ((0, 0), f64::INFINITY, i32::MAX);
    for dy in dy_lo..=dy_hi {
        for dx in dx_lo..=dx_hi {
            let sad = sad_at(cur, reference, r, dy, dx);
            let l1 = dy.abs() + dx.abs();
            if sad < best.1 || (sad == best.1 && l1 < best.2) {
                best = ((dy, dx), sad, l1);
            }
        }
    }
    (best.0, best.1)
}

/// Block motion search for the block at `(row, col)` of a `block`-sized tiling.
pub fn block_motion_search(
    cur: &Tensor,
    reference: &Tensor,
    block_index: (usize, usize),
    block: usize,
    range: usize,
) -> BlockMotion {
    let (_, h, w) = cur.chw();
    let (y, x) = (block_index.0 * block, block_index.1 * block);
    assert!(y < h && x < w, "block outside frame");
    let rect = BlockRect {
        y,
        x,
        h: block.min(h - y),
        w: block.min(w - x),
    };
    let (mv, sad) = search_block(cur, reference, rect, range);
    BlockMotion {
        block_index,
        mv,
        mode: PredMode::Inter,
        sad,
    }
}
