//! Side-by-side comparison of codec block motion and attention-estimated
//! motion, plus codec and latent residual maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::viz::{draw_motion, gray_png, Canvas};
use crate::error::{Error, Result};
use crate::media_io::{to_frames, write_atomic, RawClip};
use crate::nn::ParamStore;
use crate::pdis_net::{crds_forward, Crds};
use crate::tensor::Tensor;
use crate::toy_codec::{CodecMetadata, PredMode};

/// Vectors shorter than this have no direction.
const MIN_LEN: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MvInspection {
    pub frame: usize,
    pub reference: usize,
    pub inter_blocks: usize,
    /// Mean `(dy, dx)` over inter-coded blocks.
    pub codec_mean: (f64, f64),
    /// Mean attention motion over the pixels of those blocks.
    pub muna_mean: (f64, f64),
    /// Euclidean distance between the two means, in pixels.
    pub mean_distance: f64,
    /// Mean angle in degrees between per-block vectors; `None` when no
    /// block has two non-zero vectors.
    pub angular_error_deg: Option<f64>,
    pub angle_blocks: usize,
}

/// Codec motion broadcast to every pixel of its block: `[2, H, W]`.
pub fn codec_motion_field(meta: &CodecMetadata, frame: usize) -> Result<Tensor> {
    let fm = meta
        .frames
        .get(frame)
        .ok_or_else(|| Error::InvalidInput(format!("frame {frame} not in metadata")))?;
    let (h, w, b) = (meta.height, meta.width, meta.config.block);
    let mut out = Tensor::zeros(&[2, h, w]);
    for m in &fm.motions {
        if m.mode != PredMode::Inter {
            continue;
        }
        let (y0, x0) = (m.block_index.0 * b, m.block_index.1 * b);
        for y in y0..(y0 + b).min(h) {
            for x in x0..(x0 + b).min(w) {
                out.set3(0, y, x, m.mv.0 as f64);
                out.set3(1, y, x, m.mv.1 as f64);
            }
        }
    }
    Ok(out)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Channel sum of a `[C, H, W]` latent residual, 1 above the median.
pub fn binarized_residual(r: &Tensor) -> Vec<f64> {
    let (c, h, w) = r.chw();
    let hw = h * w;
    let sum: Vec<f64> = (0..hw).map(|p| (0..c).map(|ch| r.data()[ch * hw + p]).sum()).collect();
    let m = median(&sum);
    sum.iter().map(|&v| if v > m { 1.0 } else { 0.0 }).collect()
}

/// Compare motion of `frame` towards the previous frame. `lq` is the codec
/// output described by `meta`.
pub fn inspect_mv(
    store: &ParamStore,
    model: &Crds,
    lq: &RawClip,
    meta: &CodecMetadata,
    frame: usize,
    out: Option<&Path>,
) -> Result<MvInspection> {
    if frame == 0 || frame >= lq.frame_count() {
        return Err(Error::InvalidInput(format!(
            "frame must be in 1..{} (frame 0 has no reference)",
            lq.frame_count()
        )));
    }
    if meta.frames.len() != lq.frame_count() || (meta.height, meta.width) != (lq.height(), lq.width()) {
        return Err(Error::InvalidInput("codec metadata does not describe this clip".into()));
    }
    let mw = model.config.muna.temporal_radius;
    if mw == 0 {
        return Err(Error::InvalidInput("model has no temporal references".into()));
    }
    let codec = codec_motion_field(meta, frame)?;
    let (_, trace) = crds_forward(store, model, lq, true)?;
    let first = &trace.stages[0];
    let muna = &first.motion[frame][mw - 1];

    let (h, w, b) = (meta.height, meta.width, meta.config.block);
    let mut inter = 0usize;
    let (mut cy, mut cx, mut my, mut mx, mut npx) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut angle_sum, mut angle_n) = (0.0, 0usize);
    for m in meta.frames[frame].motions.iter().filter(|m| m.mode == PredMode::Inter) {
        inter += 1;
        let (vy, vx) = (m.mv.0 as f64, m.mv.1 as f64);
        cy += vy;
        cx += vx;
        let (y0, x0) = (m.block_index.0 * b, m.block_index.1 * b);
        let (mut by, mut bx, mut n) = (0.0, 0.0, 0.0);
        for y in y0..(y0 + b).min(h) {
            for x in x0..(x0 + b).min(w) {
                by += muna.at3(0, y, x);
                bx += muna.at3(1, y, x);
                n += 1.0;
            }
        }
        my += by;
        mx += bx;
        npx += n;
        let (uy, ux) = (by / n, bx / n);
        let (lc, lm) = (vy.hypot(vx), uy.hypot(ux));
        if lc > MIN_LEN && lm > MIN_LEN {
            let cos = ((vy * uy + vx * ux) / (lc * lm)).clamp(-1.0, 1.0);
            angle_sum += cos.acos().to_degrees();
            angle_n += 1;
        }
    }
    let codec_mean = if inter > 0 {
        (cy / inter as f64, cx / inter as f64)
    } else {
        (0.0, 0.0)
    };
    let muna_mean = if npx > 0.0 { (my / npx, mx / npx) } else { (0.0, 0.0) };
    let res = MvInspection {
        frame,
        reference: frame - 1,
        inter_blocks: inter,
        codec_mean,
        muna_mean,
        mean_distance: (codec_mean.0 - muna_mean.0).hypot(codec_mean.1 - muna_mean.1),
        angular_error_deg: (angle_n > 0).then(|| angle_sum / angle_n as f64),
        angle_blocks: angle_n,
    };

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let frames = to_frames(lq);
        let bg = frames[frame].tensor().plane(0).to_vec();
        let scale = 8;
        let step = b.max(1);
        let panel = w * scale;
        let mut both = Canvas::new(2 * panel + scale, h * scale, 255);
        draw_motion(&mut both, &bg, &codec, scale, 0, step, 1.0);
        draw_motion(&mut both, &bg, muna, scale, panel + scale, step, 1.0);
        both.save(&dir.join("mv_compare.png"))?;
        for (name, field) in [("mv_codec.png", &codec), ("mv_muna.png", muna)] {
            let mut c = Canvas::new(panel, h * scale, 255);
            draw_motion(&mut c, &bg, field, scale, 0, step, 1.0);
            c.save(&dir.join(name))?;
        }

        let fm = &meta.frames[frame];
        let pred = fm.predicted.crop(0, 0, h, w);
        let lqt = frames[frame].tensor();
        let hw = h * w;
        let ch = lqt.chw().0;
        let codec_res: Vec<f64> = (0..hw)
            .map(|p| {
                (0..ch)
                    .map(|c| (lqt.data()[c * hw + p] * 255.0 - pred.data()[c * hw + p]).abs())
                    .sum::<f64>()
                    / ch as f64
            })
            .collect();
        let peak = codec_res.iter().copied().fold(1e-9, f64::max);
        let latent_res = binarized_residual(&first.residual[frame]);
        gray_png(&dir.join("residual_codec.png"), &codec_res, h, w, scale, 0.0, peak)?;
        gray_png(&dir.join("residual_latent.png"), &latent_res, h, w, scale, 0.0, 1.0)?;
        let mut pair = Canvas::new(2 * panel + scale, h * scale, 255);
        pair.blit_gray(&codec_res, h, w, scale, 0, 0.0, peak);
        pair.blit_gray(&latent_res, h, w, scale, panel + scale, 0.0, 1.0);
        pair.save(&dir.join("residual_compare.png"))?;
        write_atomic(
            &dir.join("inspect_mv.json"),
            serde_json::to_string_pretty(&res)?.as_bytes(),
        )?;
    }
    Ok(res)
}
