//! PSNR / SSIM on `[0, 1]` frames and the Δ-metric report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::media_io::{container::write_atomic, to_frames, Frame, RawClip};

/// PSNR reported for (near-)identical frames.
pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Which samples a metric is computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricPlane {
    /// BT.601 luma for RGB, identity for gray.
    #[default]
    Luma,
    /// Every channel, pooled.
    All,
}

fn planes(f: &Frame, plane: MetricPlane) -> Vec<Vec<f64>> {
    let t = f.tensor();
    let (c, _, _) = t.chw();
    match (plane, c) {
        (MetricPlane::Luma, 3) => {
            let (r, g, b) = (t.plane(0), t.plane(1), t.plane(2));
            vec![r
                .iter()
                .zip(g)
                .zip(b)
                .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
                .collect()]
        }
        (MetricPlane::Luma, _) => vec![t.plane(0).to_vec()],
        (MetricPlane::All, _) => (0..c).map(|i| t.plane(i).to_vec()).collect(),
    }
}

pub fn mse(a: &Frame, b: &Frame, plane: MetricPlane) -> Result<f64> {
    ensure_shape!(a.chw() == b.chw(), "{:?} vs {:?}", a.chw(), b.chw());
    let (pa, pb) = (planes(a, plane), planes(b, plane));
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        for (u, v) in x.iter().zip(y) {
            let d = u - v;
            sum += d * d;
        }
        n += x.len();
    }
    Ok(sum / n as f64)
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    psnr_on(a, b, MetricPlane::Luma)
}

pub fn psnr_on(a: &Frame, b: &Frame, plane: MetricPlane) -> Result<f64> {
    let m = mse(a, b, plane)?;
    if m < MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" Gaussian filtering of an `h x w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                acc += gk * p[y * w + x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                acc += gk * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(u, v)| u * v).collect();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let s_aa = filter_valid(&aa, h, w, &g);
    let s_bb = filter_valid(&bb, h, w, &g);
    let s_ab = filter_valid(&ab, h, w, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    ssim_on(a, b, MetricPlane::Luma)
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5), averaged over planes.
pub fn ssim_on(a: &Frame, b: &Frame, plane: MetricPlane) -> Result<f64> {
    ensure_shape!(a.chw() == b.chw(), "{:?} vs {:?}", a.chw(), b.chw());
    let (_, h, w) = a.chw();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let (pa, pb) = (planes(a, plane), planes(b, plane));
    let n = pa.len() as f64;
    Ok(pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, h, w)).sum::<f64>() / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// PSNR(enhanced, gt) per frame.
    pub per_frame_psnr: Vec<f64>,
    /// SSIM(enhanced, gt) per frame.
    pub per_frame_ssim: Vec<f64>,
    pub per_frame_psnr_compressed: Vec<f64>,
    pub per_frame_ssim_compressed: Vec<f64>,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl MetricsReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.per_frame_psnr)
    }

    pub fn mean_psnr_compressed(&self) -> f64 {
        mean(&self.per_frame_psnr_compressed)
    }

    /// Pool several per-clip reports; deltas are recomputed over all frames.
    pub fn merge(reports: &[MetricsReport]) -> MetricsReport {
        let cat = |f: fn(&MetricsReport) -> &Vec<f64>| -> Vec<f64> {
            reports.iter().flat_map(|r| f(r).iter().copied()).collect()
        };
        let per_frame_psnr = cat(|r| &r.per_frame_psnr);
        let per_frame_ssim = cat(|r| &r.per_frame_ssim);
        let per_frame_psnr_compressed = cat(|r| &r.per_frame_psnr_compressed);
        let per_frame_ssim_compressed = cat(|r| &r.per_frame_ssim_compressed);
        MetricsReport {
            delta_psnr: mean(&per_frame_psnr) - mean(&per_frame_psnr_compressed),
            delta_ssim: mean(&per_frame_ssim) - mean(&per_frame_ssim_compressed),
            per_frame_psnr,
            per_frame_ssim,
            per_frame_psnr_compressed,
            per_frame_ssim_compressed,
        }
    }

    pub fn to_csv(&self, clip_label: &str) -> String {
        let mut s = String::new();
        for i in 0..self.per_frame_psnr.len() {
            writeln!(
                s,
                "{clip_label},{i},{:.6},{:.6},{:.8},{:.8}",
                self.per_frame_psnr_compressed[i],
                self.per_frame_psnr[i],
                self.per_frame_ssim_compressed[i],
                self.per_frame_ssim[i]
            )
            .unwrap();
        }
        s
    }
}

pub const CSV_HEADER: &str = "clip,frame,psnr_compressed,psnr_enhanced,ssim_compressed,ssim_enhanced";

pub fn delta_metrics(enhanced: &RawClip, compressed: &RawClip, gt: &RawClip) -> Result<MetricsReport> {
    delta_metrics_on(enhanced, compressed, gt, MetricPlane::Luma)
}

pub fn delta_metrics_on(
    enhanced: &RawClip,
    compressed: &RawClip,
    gt: &RawClip,
    plane: MetricPlane,
) -> Result<MetricsReport> {
    ensure_shape!(
        enhanced.same_geometry(gt) && compressed.same_geometry(gt),
        "clips differ in frame count or geometry"
    );
    let (e, c, g) = (to_frames(enhanced), to_frames(compressed), to_frames(gt));
    let mut r = MetricsReport {
        per_frame_psnr: Vec::new(),
        per_frame_ssim: Vec::new(),
        per_frame_psnr_compressed: Vec::new(),
        per_frame_ssim_compressed: Vec::new(),
        delta_psnr: 0.0,
        delta_ssim: 0.0,
    };
    for ((e, c), g) in e.iter().zip(&c).zip(&g) {
        r.per_frame_psnr.push(psnr_on(e, g, plane)?);
        r.per_frame_ssim.push(ssim_on(e, g, plane)?);
        r.per_frame_psnr_compressed.push(psnr_on(c, g, plane)?);
        r.per_frame_ssim_compressed.push(ssim_on(c, g, plane)?);
    }
    r.delta_psnr = mean(&r.per_frame_psnr) - mean(&r.per_frame_psnr_compressed);
    r.delta_ssim = mean(&r.per_frame_ssim) - mean(&r.per_frame_ssim_compressed);
    Ok(r)
}

/// Write `metrics.json` and `metrics.csv` for a set of labelled clip reports.
pub fn write_reports(dir: &Path, reports: &[(String, MetricsReport)]) -> Result<MetricsReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pooled = MetricsReport::merge(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    let mut csv = format!("{CSV_HEADER}\n");
    for (label, r) in reports {
        csv.push_str(&r.to_csv(label));
    }
    write_atomic(&dir.join("metrics.csv"), csv.as_bytes())?;
    let json = serde_json::json!({
        "delta_psnr": pooled.delta_psnr,
        "delta_ssim": pooled.delta_ssim,
        "clips": reports.iter().map(|(l, r)| serde_json::json!({
            "clip": l,
            "delta_psnr": r.delta_psnr,
            "delta_ssim": r.delta_ssim,
            "per_frame_psnr": r.per_frame_psnr,
            "per_frame_ssim": r.per_frame_ssim,
        })).collect::<Vec<_>>(),
    });
    write_atomic(
        &dir.join("metrics.json"),
        serde_json::to_string_pretty(&json)?.as_bytes(),
    )?;
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Frame {
        Frame(Tensor::from_vec(
            &[c, h, w],
            (0..c * h * w).map(|_| rng.gen()).collect(),
        ))
    }

    #[test]
    fn identical_frames_hit_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_frame(&mut rng, 1, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn one_step_offset_closed_form() {
        let a = Frame(Tensor::full(&[1, 8, 8], 0.2));
        let b = Frame(Tensor::full(&[1, 8, 8], 0.2 + 1.0 / 255.0));
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9, "{p}");
        assert!((p - 48.13).abs() < 0.01);
    }

    #[test]
    fn psnr_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, b) = (random_frame(&mut rng, 3, 9, 13), random_frame(&mut rng, 3, 9, 13));
        let mut acc = 0.0;
        for y in 0..9 {
            for x in 0..13 {
                let la = 0.299 * a.0.at3(0, y, x) + 0.587 * a.0.at3(1, y, x) + 0.114 * a.0.at3(2, y, x);
                let lb = 0.299 * b.0.at3(0, y, x) + 0.587 * b.0.at3(1, y, x) + 0.114 * b.0.at3(2, y, x);
                acc += (la - lb) * (la - lb);
            }
        }
        let oracle = 10.0 * (1.0 / (acc / 117.0)).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = Frame(Tensor::zeros(&[1, 4, 4]));
        let b = Frame(Tensor::zeros(&[1, 4, 5]));
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn ssim_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_frame(&mut rng, 1, 24, 24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);

        let zeros = Frame(Tensor::zeros(&[1, 16, 16]));
        let ones = Frame(Tensor::full(&[1, 16, 16], 1.0));
        let s = ssim(&zeros, &ones).unwrap();
        // closed form for constants: C1 / (1 + C1)
        let c1 = 1e-4;
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!(s < 0.01);

        let mut shifted = a.clone();
        for y in 0..24 {
            for x in 0..24 {
                shifted.0.set3(0, y, x, a.0.at3(0, y, (x + 1) % 24));
            }
        }
        assert!(ssim(&a, &shifted).unwrap() < ssim(&a, &a).unwrap());

        let small = Frame(Tensor::zeros(&[1, 10, 32]));
        assert!(ssim(&small, &small).is_err());
    }
}
