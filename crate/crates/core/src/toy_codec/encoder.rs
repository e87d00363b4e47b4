use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob::{ArrayEntry, BlobReader, BlobWriter};
use crate::error::{Error, Result};
use crate::media_io::{to_frames, write_atomic, Frame, RawClip};
use crate::tensor::Tensor;
use crate::toy_codec::dct::Dct;
use crate::toy_codec::motion::{search_block, BlockMotion, BlockRect, PredMode};
use crate::toy_codec::quant::{dequantize, qstep, quantize};

/// Samples are coded on the 0..255 scale so that `qstep(qp)` has HEVC-like magnitude.
pub const SAMPLE_SCALE: f64 = 255.0;
const INTRA_FALLBACK: f64 = 0.5 * SAMPLE_SCALE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gop {
    #[default]
    #[serde(rename = "FIRST_INTRA_THEN_P")]
    FirstIntraThenP,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub block: usize,
    pub search_range: usize,
    pub qp: u32,
    pub gop: Gop,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            block: 8,
            search_range: 8,
            qp: 37,
            gop: Gop::FirstIntraThenP,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::InvalidInput("block size must be positive".into()));
        }
        Ok(())
    }

    pub fn qstep(&self) -> f64 {
        qstep(self.qp)
    }
}

/// Everything produced while coding one (padded) frame. Sample-domain
/// tensors are on the 0..255 scale.
#[derive(Clone, Debug)]
pub struct FrameCoding {
    pub predicted: Tensor,
    pub residual: Tensor,
    /// Block-DCT coefficients of the residual, laid out on the frame tiling.
    pub coeffs: Tensor,
    /// Quantized levels on the same layout; empty when coding losslessly.
    pub levels: Vec<i32>,
    pub recon: Tensor,
    pub motions: Vec<BlockMotion>,
}

fn round_to_int_range(v: f64) -> f64 {
    v.clamp(0.0, SAMPLE_SCALE).round()
}

fn intra_dc(recon: &Tensor, c: usize, r: BlockRect) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    if r.y > 0 {
        for x in r.x..r.x + r.w {
            sum += recon.at3(c, r.y - 1, x);
            n += 1;
        }
    }
    if r.x > 0 {
        for y in r.y..r.y + r.h {
            sum += recon.at3(c, y, r.x - 1);
            n += 1;
        }
    }
    if n == 0 {
        INTRA_FALLBACK
    } else {
        sum / n as f64
    }
}

/// Code one padded frame block by block in raster order.
///
/// INTRA_DC predicts from already reconstructed top/left neighbours of the
/// current frame, INTER copies the best-matching block of `reference`.
/// `step = None` codes the residual losslessly.
pub fn code_frame(cur: &Tensor, reference: Option<&Tensor>, cfg: &CodecConfig, step: Option<f64>) -> FrameCoding {
    code_frame_with(cur, reference, cfg, step, None)
}

/// As [`code_frame`], but reusing prior per-block mode and motion decisions.
pub fn recode_frame(
    cur: &Tensor,
    reference: Option<&Tensor>,
    cfg: &CodecConfig,
    step: f64,
    decisions: &[BlockMotion],
) -> FrameCoding {
    code_frame_with(cur, reference, cfg, Some(step), Some(decisions))
}

fn code_frame_with(
    cur: &Tensor,
    reference: Option<&Tensor>,
    cfg: &CodecConfig,
    step: Option<f64>,
    decisions: Option<&[BlockMotion]>,
) -> FrameCoding {
    let (ch, h, w) = cur.chw();
    let b = cfg.block;
    assert!(h % b == 0 && w % b == 0, "frame must be padded to the block size");
    let dct = Dct::new(b);
    let mut predicted = Tensor::zeros(&[ch, h, w]);
    let mut residual = Tensor::zeros(&[ch, h, w]);
    let mut coeffs = Tensor::zeros(&[ch, h, w]);
    let mut levels = if step.is_some() {
        vec![0i32; ch * h * w]
    } else {
        Vec::new()
    };
    let mut recon = Tensor::zeros(&[ch, h, w]);
    let mut motions = Vec::with_capacity((h / b) * (w / b));

    let mut blk = vec![0.0; b * b];
    for by in 0..h / b {
        for bx in 0..w / b {
            let r = BlockRect {
                y: by * b,
                x: bx * b,
                h: b,
                w: b,
            };
            let dcs: Vec<f64> = (0..ch).map(|c| intra_dc(&recon, c, r)).collect();
            let mut intra_sad = 0.0;
            for (c, dc) in dcs.iter().enumerate() {
                for y in r.y..r.y + b {
                    for x in r.x..r.x + b {
                        intra_sad += (cur.at3(c, y, x) - dc).abs();
                    }
                }
            }
            let inter = reference.map(|rf| search_block(cur, rf, r, cfg.search_range));
            let motion = match decisions {
                Some(d) => {
                    let m = d[motions.len()];
                    assert_eq!(m.block_index, (by, bx), "decisions out of raster order");
                    assert!(
                        m.mode == PredMode::IntraDc || reference.is_some(),
                        "inter decision without reference"
                    );
                    m
                }
                None => match inter {
                    Some((mv, sad)) if sad <= intra_sad => BlockMotion {
                        block_index: (by, bx),
                        mv,
                        mode: PredMode::Inter,
                        sad,
                    },
                    _ => BlockMotion {
                        block_index: (by, bx),
                        mv: (0, 0),
                        mode: PredMode::IntraDc,
                        sad: intra_sad,
                    },
                },
            };
            for c in 0..ch {
                for y in 0..b {
                    for x in 0..b {
                        let (py, px) = (r.y + y, r.x + x);
                        let p = match motion.mode {
                            PredMode::IntraDc => dcs[c],
                            PredMode::Inter => reference.unwrap().at3(
                                c,
                                (py as i32 + motion.mv.0) as usize,
                                (px as i32 + motion.mv.1) as usize,
                            ),
                        };
                        predicted.set3(c, py, px, p);
                        let res = cur.at3(c, py, px) - p;
                        residual.set3(c, py, px, res);
                        blk[y * b + x] = res;
                    }
                }
                let rc = dct.forward(&blk).expect("block size matches");
                let rec_coeffs: Vec<f64> = match step {
                    Some(s) => rc
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let q = quantize(v, s);
                            let idx = (c * h + r.y + i / b) * w + r.x + i % b;
                            levels[idx] = q;
                            dequantize(q, s)
                        })
                        .collect(),
                    None => rc.clone(),
                };
                let rec_res = dct.inverse(&rec_coeffs).expect("block size matches");
                for y in 0..b {
                    for x in 0..b {
                        let (py, px) = (r.y + y, r.x + x);
                        coeffs.set3(c, py, px, rc[y * b + x]);
                        let v = predicted.at3(c, py, px) + rec_res[y * b + x];
                        recon.set3(c, py, px, if step.is_some() { round_to_int_range(v) } else { v });
                    }
                }
            }
            motions.push(motion);
        }
    }
    FrameCoding {
        predicted,
        residual,
        coeffs,
        levels,
        recon,
        motions,
    }
}

/// Edge-replicate a `[C, H, W]` tensor up to multiples of `block`.
pub fn pad_to_block(t: &Tensor, block: usize) -> Tensor {
    let (c, h, w) = t.chw();
    let (ph, pw) = (h.div_ceil(block) * block, w.div_ceil(block) * block);
    if (ph, pw) == (h, w) {
        return t.clone();
    }
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ci in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                out.set3(ci, y, x, t.at3(ci, y.min(h - 1), x.min(w - 1)));
            }
        }
    }
    out
}

/// Prediction and residual of a frame in data space (`[0, 1]` scale).
#[derive(Clone, Debug)]
pub struct Prediction {
    pub predicted: Frame,
    /// `cur - predicted`
    pub residual: Tensor,
    pub motions: Vec<BlockMotion>,
}

/// Predict `cur` from the most recent reconstructed reference (none for the
/// first frame), coding the residual losslessly.
pub fn predict_frame(cur: &Frame, recon_refs: &[Frame], cfg: &CodecConfig) -> Result<Prediction> {
    cfg.validate()?;
    let (_, h, w) = cur.chw();
    let cur_p = pad_to_block(&cur.tensor().scale(SAMPLE_SCALE), cfg.block);
    let ref_p = match recon_refs.last() {
        Some(r) => {
            if r.chw() != cur.chw() {
                return Err(Error::Shape("reference geometry differs from current frame".into()));
            }
            Some(pad_to_block(&r.tensor().scale(SAMPLE_SCALE), cfg.block))
        }
        None => None,
    };
    let coded = code_frame(&cur_p, ref_p.as_ref(), cfg, None);
    let predicted = coded.predicted.crop(0, 0, h, w).scale(1.0 / SAMPLE_SCALE);
    let residual = cur.tensor().sub(&predicted)?;
    Ok(Prediction {
        predicted: Frame(predicted),
        residual,
        motions: coded.motions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMeta {
    pub motions: Vec<BlockMotion>,
    /// r^c: residual block-DCT coefficients (0..255 sample scale).
    pub residual_coeffs: Tensor,
    /// Quantized levels; r̂^c = levels * qstep.
    pub levels: Vec<i32>,
    /// Prediction on the padded grid (0..255 scale).
    pub predicted: Tensor,
}

impl FrameMeta {
    /// r̂^c as real values.
    pub fn quantized_coeffs(&self, step: f64) -> Tensor {
        Tensor::from_vec(
            self.residual_coeffs.shape(),
            self.levels.iter().map(|&q| dequantize(q, step)).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecMetadata {
    pub config: CodecConfig,
    pub qstep: f64,
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub channels: usize,
    pub frames: Vec<FrameMeta>,
}

/// Closed-loop encode/decode of a clip. Returns the reconstructed (LQ) clip
/// and the coding metadata.
pub fn encode_clip(clip: &RawClip, cfg: &CodecConfig) -> Result<(RawClip, CodecMetadata)> {
    cfg.validate()?;
    let step = cfg.qstep();
    let (h, w, ch) = (clip.height(), clip.width(), clip.channels());
    let mut prev: Option<Tensor> = None;
    let mut out_frames = Vec::with_capacity(clip.frame_count());
    let mut metas = Vec::with_capacity(clip.frame_count());
    let (mut ph, mut pw) = (h, w);
    for f in to_frames(clip) {
        let cur = pad_to_block(&f.tensor().scale(SAMPLE_SCALE), cfg.block);
        (_, ph, pw) = cur.chw();
        let coded = code_frame(&cur, prev.as_ref(), cfg, Some(step));
        let cropped = coded.recon.crop(0, 0, h, w);
        out_frames.push(cropped.data().iter().map(|&v| v as u8).collect::<Vec<u8>>());
        metas.push(FrameMeta {
            motions: coded.motions,
            residual_coeffs: coded.coeffs,
            levels: coded.levels,
            predicted: coded.predicted,
        });
        prev = Some(coded.recon);
    }
    let lq = RawClip::new(out_frames, h, w, clip.colorspace(), clip.fps)?;
    Ok((
        lq,
        CodecMetadata {
            config: *cfg,
            qstep: step,
            height: h,
            width: w,
            padded_height: ph,
            padded_width: pw,
            channels: ch,
            frames: metas,
        },
    ))
}

/// Reconstruct a clip from its metadata alone, the way a decoder would:
/// predictions come from already decoded samples, residuals from the
/// quantized levels.
pub fn decode_clip(meta: &CodecMetadata) -> Result<Vec<Tensor>> {
    let cfg = &meta.config;
    cfg.validate()?;
    let b = cfg.block;
    let (ch, h, w) = (meta.channels, meta.padded_height, meta.padded_width);
    let dct = Dct::new(b);
    let mut out: Vec<Tensor> = Vec::with_capacity(meta.frames.len());
    for fm in &meta.frames {
        if fm.levels.len() != ch * h * w || fm.motions.len() != (h / b) * (w / b) {
            return Err(Error::Corrupt("metadata arrays do not match the frame tiling".into()));
        }
        let mut recon = Tensor::zeros(&[ch, h, w]);
        let mut blk = vec![0.0; b * b];
        for m in &fm.motions {
            let r = BlockRect {
                y: m.block_index.0 * b,
                x: m.block_index.1 * b,
                h: b,
                w: b,
            };
            for c in 0..ch {
                let dc = intra_dc(&recon, c, r);
                let mut pred = vec![0.0; b * b];
                for y in 0..b {
                    for x in 0..b {
                        pred[y * b + x] = match m.mode {
                            PredMode::IntraDc => dc,
                            PredMode::Inter => {
                                let rf = out
                                    .last()
                                    .ok_or_else(|| Error::Corrupt("inter block without a reference frame".into()))?;
                                rf.at3(
                                    c,
                                    (r.y as i32 + y as i32 + m.mv.0) as usize,
                                    (r.x as i32 + x as i32 + m.mv.1) as usize,
                                )
                            }
                        };
                        blk[y * b + x] = dequantize(fm.levels[(c * h + r.y + y) * w + r.x + x], meta.qstep);
                    }
                }
                let res = dct.inverse(&blk)?;
                for y in 0..b {
                    for x in 0..b {
                        recon.set3(
                            c,
                            r.y + y,
                            r.x + x,
                            round_to_int_range(pred[y * b + x] + res[y * b + x]),
                        );
                    }
                }
            }
        }
        out.push(recon);
    }
    Ok(out)
}

/// Per-coefficient quantization errors η = r̂^c − r^c over all frames,
/// skipping coefficients that were (numerically) zero before quantization.
pub fn noise_samples(meta: &CodecMetadata) -> Result<Vec<f64>> {
    if meta.frames.is_empty() {
        return Err(Error::InvalidInput("codec metadata holds no frames".into()));
    }
    let step = meta.qstep;
    let dead = step * 1e-6;
    let mut out = Vec::new();
    for f in &meta.frames {
        for (&r, &q) in f.residual_coeffs.data().iter().zip(&f.levels) {
            if r.abs() < dead {
                continue;
            }
            out.push(dequantize(q, step) - r);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no non-zero residual coefficients".into()));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MetaJson {
    config: CodecConfig,
    qstep: f64,
    height: usize,
    width: usize,
    padded_height: usize,
    padded_width: usize,
    channels: usize,
    frames: Vec<MotionJson>,
    blob: String,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct MotionJson {
    index: usize,
    motions: Vec<BlockMotion>,
}

impl CodecMetadata {
    /// Writes the motion fields as JSON at `path` and the coefficient arrays
    /// to a sibling `.bin` blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_path = path.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("bad metadata path {}", path.display())))?
            .to_string();
        let mut wr = BlobWriter::new();
        let shape = [self.channels, self.padded_height, self.padded_width];
        for (i, f) in self.frames.iter().enumerate() {
            wr.push_f64(&format!("frame{i}.residual_coeffs"), &shape, f.residual_coeffs.data());
            wr.push_i32(&format!("frame{i}.levels"), &shape, &f.levels);
            wr.push_f64(&format!("frame{i}.predicted"), &shape, f.predicted.data());
        }
        let (bytes, arrays) = wr.finish();
        let json = MetaJson {
            config: self.config,
            qstep: self.qstep,
            height: self.height,
            width: self.width,
            padded_height: self.padded_height,
            padded_width: self.padded_width,
            channels: self.channels,
            frames: self
                .frames
                .iter()
                .enumerate()
                .map(|(index, f)| MotionJson {
                    index,
                    motions: f.motions.clone(),
                })
                .collect(),
            blob: blob_name,
            arrays,
        };
        write_atomic(&blob_path, &bytes)?;
        write_atomic(path, serde_json::to_string(&json)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let json: MetaJson =
            serde_json::from_slice(&text).map_err(|e| Error::Format(format!("bad codec metadata: {e}")))?;
        let blob_path = path.with_file_name(&json.blob);
        let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let rd = BlobReader::new(&bytes, &json.arrays)?;
        let mut frames = Vec::with_capacity(json.frames.len());
        for m in json.frames {
            let i = m.index;
            let (shape, rc) = rd.f64(&format!("frame{i}.residual_coeffs"))?;
            let (_, levels) = rd.i32(&format!("frame{i}.levels"))?;
            let (pshape, pred) = rd.f64(&format!("frame{i}.predicted"))?;
            frames.push(FrameMeta {
                motions: m.motions,
                residual_coeffs: Tensor::try_from_vec(&shape, rc)?,
                levels,
                predicted: Tensor::try_from_vec(&pshape, pred)?,
            });
        }
        Ok(CodecMetadata {
            config: json.config,
            qstep: json.qstep,
            height: json.height,
            width: json.width,
            padded_height: json.padded_height,
            padded_width: json.padded_width,
            channels: json.channels,
            frames,
        })
    }
}
