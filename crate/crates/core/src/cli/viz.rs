//! Small raster helpers for the PNG outputs.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::tensor::Tensor;

pub struct Canvas {
    img: RgbImage,
}

const ARROW: Rgb<u8> = Rgb([255, 60, 40]);
const BAR: Rgb<u8> = Rgb([40, 90, 200]);

impl Canvas {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Canvas {
            img: RgbImage::from_pixel(width as u32, height as u32, Rgb([fill; 3])),
        }
    }

    pub fn width(&self) -> usize {
        self.img.width() as usize
    }

    pub fn height(&self) -> usize {
        self.img.height() as usize
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as usize) < self.width() && (y as usize) < self.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Arrow from `from` with a small head at the tip.
    pub fn arrow(&mut self, from: (f64, f64), to: (f64, f64), c: Rgb<u8>) {
        let p = |(x, y): (f64, f64)| (x.round() as i64, y.round() as i64);
        self.line(p(from), p(to), c);
        let (vx, vy) = (to.0 - from.0, to.1 - from.1);
        let len = (vx * vx + vy * vy).sqrt();
        if len < 1.0 {
            self.put(p(to).0, p(to).1, c);
            return;
        }
        let (ux, uy) = (vx / len, vy / len);
        let head = len.min(4.0);
        for side in [-1.0, 1.0] {
            let hx = to.0 - head * (ux - side * 0.5 * uy);
            let hy = to.1 - head * (uy + side * 0.5 * ux);
            self.line(p(to), p((hx, hy)), c);
        }
    }

    /// Nearest-neighbour upscaled grayscale plane in `[lo, hi]`.
    pub fn blit_gray(&mut self, data: &[f64], h: usize, w: usize, scale: usize, ox: usize, lo: f64, hi: f64) {
        let span = (hi - lo).max(1e-12);
        for y in 0..h * scale {
            for x in 0..w * scale {
                let v = (data[(y / scale) * w + x / scale] - lo) / span;
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                self.put((ox + x) as i64, y as i64, Rgb([g; 3]));
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path)?;
        Ok(())
    }
}

/// Grayscale image of `data` scaled so `lo` is black and `hi` white.
pub fn gray_png(path: &Path, data: &[f64], h: usize, w: usize, scale: usize, lo: f64, hi: f64) -> Result<()> {
    let mut c = Canvas::new(w * scale, h * scale, 0);
    c.blit_gray(data, h, w, scale, 0, lo, hi);
    c.save(path)
}

/// Bar histogram of `samples` over `[lo, hi]`.
pub fn histogram_png(path: &Path, samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<()> {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let b = (((s - lo) / (hi - lo)) * bins as f64).floor();
        if b >= 0.0 {
            counts[(b as usize).min(bins - 1)] += 1;
        }
    }
    let (bw, height, pad) = (6usize, 200usize, 10usize);
    let mut c = Canvas::new(bins * bw + 2 * pad, height + 2 * pad, 255);
    let top = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    for (i, &n) in counts.iter().enumerate() {
        let bar = (n as f64 / top * height as f64).round() as usize;
        for x in 0..bw - 1 {
            for y in 0..bar {
                c.put((pad + i * bw + x) as i64, (pad + height - 1 - y) as i64, BAR);
            }
        }
    }
    let base = (pad + height) as i64;
    c.line((pad as i64, base), ((pad + bins * bw) as i64, base), Rgb([0; 3]));
    c.save(path)
}

/// One motion-field panel: the frame as background and an arrow per
/// `step × step` cell, showing the cell's mean `(dy, dx)` times `gain`.
pub fn draw_motion(c: &mut Canvas, frame: &[f64], field: &Tensor, scale: usize, ox: usize, step: usize, gain: f64) {
    let (_, h, w) = field.chw();
    c.blit_gray(frame, h, w, scale, ox, 0.0, 1.0);
    let s = scale as f64;
    for by in (0..h).step_by(step) {
        for bx in (0..w).step_by(step) {
            let (mut dy, mut dx, mut n) = (0.0, 0.0, 0.0);
            for y in by..(by + step).min(h) {
                for x in bx..(bx + step).min(w) {
                    dy += field.at3(0, y, x);
                    dx += field.at3(1, y, x);
                    n += 1.0;
                }
            }
            let cy = (by as f64 + (step.min(h - by) as f64) / 2.0) * s;
            let cx = ox as f64 + (bx as f64 + (step.min(w - bx) as f64) / 2.0) * s;
            c.arrow((cx, cy), (cx + gain * s * dx / n, cy + gain * s * dy / n), ARROW);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pngs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        histogram_png(&p, &[0.1, -0.2, 0.3, 0.3], -0.5, 0.5, 10).unwrap();
        assert!(std::fs::metadata(&p).unwrap().len() > 0);
        let mut c = Canvas::new(64, 32, 0);
        let f = Tensor::full(&[2, 8, 8], 1.0);
        draw_motion(&mut c, &[0.5; 64], &f, 4, 0, 4, 2.0);
        draw_motion(&mut c, &[0.5; 64], &f, 4, 32, 4, 2.0);
        let q = dir.path().join("m.png");
        c.save(&q).unwrap();
        let back = image::open(&q).unwrap();
        assert_eq!((back.width(), back.height()), (64, 32));
    }
}
