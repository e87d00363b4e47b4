//! Procedural test clips: textured rectangles moving over a smooth
//! background, with optional per-frame grain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::media_io::{Colorspace, Fps, RawClip};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub rects: usize,
    /// Peak-to-peak amplitude of the static texture, in 8-bit steps.
    pub texture: f64,
    /// Standard deviation of independent per-frame noise, in 8-bit steps.
    pub grain: f64,
    /// Maximum per-frame rectangle speed in pixels.
    pub max_speed: i32,
    pub color: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            frames: 12,
            rects: 3,
            texture: 90.0,
            grain: 0.0,
            max_speed: 2,
            color: false,
        }
    }
}

impl SynthConfig {
    /// Heavily textured clips with strong temporal grain; residuals stay
    /// large compared to the QP 37 quantizer step.
    pub fn textured() -> Self {
        SynthConfig {
            texture: 160.0,
            grain: 60.0,
            rects: 4,
            ..Default::default()
        }
    }
}

/// Smooth random field in `[-0.5, 0.5]`, bilinear over a grid of spacing `cell`.
fn smooth_field(rng: &mut impl Rng, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let (gh, gw) = (h / cell + 2, w / cell + 2);
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            out[y * w + x] = (1.0 - ty) * ((1.0 - tx) * g(y0, x0) + tx * g(y0, x0 + 1))
                + ty * ((1.0 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
        }
    }
    out
}

fn texture(rng: &mut impl Rng, h: usize, w: usize) -> Vec<f64> {
    let a = smooth_field(rng, h, w, 8);
    let b = smooth_field(rng, h, w, 3);
    a.iter().zip(&b).map(|(a, b)| 0.6 * a + 0.4 * b).collect()
}

struct Rect {
    y: i32,
    x: i32,
    h: usize,
    w: usize,
    vy: i32,
    vx: i32,
    base: [f64; 3],
    tex: Vec<f64>,
}

fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn synthesize_clip(cfg: &SynthConfig, seed: u64) -> RawClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);
    let channels = if cfg.color { 3 } else { 1 };
    let bg_tex = texture(&mut rng, h, w);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.gen_range(70.0..180.0));
    let rects: Vec<Rect> = (0..cfg.rects)
        .map(|_| {
            let rh = rng.gen_range(h / 5..=h / 2).max(2);
            let rw = rng.gen_range(w / 5..=w / 2).max(2);
            Rect {
                y: rng.gen_range(0..h as i32),
                x: rng.gen_range(0..w as i32),
                h: rh,
                w: rw,
                vy: rng.gen_range(-cfg.max_speed..=cfg.max_speed),
                vx: rng.gen_range(-cfg.max_speed..=cfg.max_speed),
                base: std::array::from_fn(|_| rng.gen_range(30.0..225.0)),
                tex: texture(&mut rng, rh, rw),
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames as i32 {
        let mut planes = vec![0.0; channels * h * w];
        for c in 0..channels {
            for i in 0..h * w {
                planes[c * h * w + i] = bg[c] + cfg.texture * bg_tex[i];
            }
        }
        for r in &rects {
            // wrap around the frame so objects never leave it
            let oy = (r.y + r.vy * t).rem_euclid(h as i32);
            let ox = (r.x + r.vx * t).rem_euclid(w as i32);
            for y in 0..r.h {
                let fy = oy as usize + y;
                if fy >= h {
                    continue;
                }
                for x in 0..r.w {
                    let fx = ox as usize + x;
                    if fx >= w {
                        continue;
                    }
                    for c in 0..channels {
                        planes[c * h * w + fy * w + fx] = r.base[c] + cfg.texture * r.tex[y * r.w + x];
                    }
                }
            }
        }
        if cfg.grain > 0.0 {
            for v in planes.iter_mut() {
                *v += cfg.grain * gauss(&mut rng);
            }
        }
        frames.push(planes.iter().map(|v| v.clamp(0.0, 255.0).round() as u8).collect());
    }
    let cs = if cfg.color { Colorspace::Rgb } else { Colorspace::Gray };
    RawClip::new(frames, h, w, cs, Fps::default()).expect("synthesized clip is valid")
}

/// A textured canvas panned so that frame `t` equals frame `t - 1` moved by
/// `(dy, dx)`: `f_t(y, x) = f_{t-1}(y - dy, x - dx)`.
pub fn global_shift_clip(h: usize, w: usize, frames: usize, shift: (i32, i32), seed: u64) -> RawClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = frames * (shift.0.unsigned_abs().max(shift.1.unsigned_abs()) as usize) + 1;
    let (ch, cw) = (h + 2 * margin, w + 2 * margin);
    let tex = texture(&mut rng, ch, cw);
    let fine = smooth_field(&mut rng, ch, cw, 2);
    let canvas: Vec<f64> = tex
        .iter()
        .zip(&fine)
        .map(|(a, b)| (128.0 + 160.0 * a + 60.0 * b).clamp(0.0, 255.0))
        .collect();
    let out = (0..frames as i32)
        .map(|t| {
            let oy = margin as i32 - shift.0 * t;
            let ox = margin as i32 - shift.1 * t;
            let mut f = Vec::with_capacity(h * w);
            for y in 0..h as i32 {
                for x in 0..w as i32 {
                    f.push(canvas[((y + oy) as usize) * cw + (x + ox) as usize].round() as u8);
                }
            }
            f
        })
        .collect();
    RawClip::new(out, h, w, Colorspace::Gray, Fps::default()).expect("valid clip")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig::default();
        assert_eq!(synthesize_clip(&cfg, 4), synthesize_clip(&cfg, 4));
        assert_ne!(synthesize_clip(&cfg, 4), synthesize_clip(&cfg, 5));
    }

    #[test]
    fn global_shift_relation() {
        let clip = global_shift_clip(24, 20, 3, (2, 1), 0);
        let (f0, f1) = (&clip.frames()[0], &clip.frames()[1]);
        for y in 2..24 {
            for x in 1..20 {
                assert_eq!(f1[y * 20 + x], f0[(y - 2) * 20 + x - 1]);
            }
        }
    }
}
