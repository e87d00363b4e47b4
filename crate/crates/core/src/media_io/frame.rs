use crate::error::{Error, Result};
use crate::media_io::{Colorspace, Fps, RawClip};
use crate::tensor::Tensor;

/// A frame in data space: `[channels, height, width]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(pub Tensor);

impl Frame {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 {
            return Err(Error::Shape(format!("frame must be rank 3, got {:?}", t.shape())));
        }
        if !t.all_finite() {
            return Err(Error::InvalidInput("frame holds non-finite values".into()));
        }
        Ok(Frame(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn chw(&self) -> (usize, usize, usize) {
        self.0.chw()
    }

    /// Clamp to `[0, 1]` and quantize to 8-bit samples.
    pub fn to_u8(&self) -> Vec<u8> {
        self.0.data().iter().map(|&v| to_u8_sample(v)).collect()
    }
}

#[inline]
pub fn to_u8_sample(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_from_u8(samples: &[u8], channels: usize, height: usize, width: usize) -> Frame {
    Frame(Tensor::from_vec(
        &[channels, height, width],
        samples.iter().map(|&v| v as f64 / 255.0).collect(),
    ))
}

/// Normalize every frame of a clip to `[0, 1]`.
pub fn to_frames(clip: &RawClip) -> Vec<Frame> {
    clip.frames()
        .iter()
        .map(|f| frame_from_u8(f, clip.channels(), clip.height(), clip.width()))
        .collect()
}

pub fn from_frames(frames: &[Frame], fps: Fps) -> Result<RawClip> {
    let first = frames.first().ok_or_else(|| Error::InvalidInput("no frames".into()))?;
    let (c, h, w) = first.chw();
    let colorspace = Colorspace::from_channels(c)?;
    for f in frames {
        if f.chw() != (c, h, w) {
            return Err(Error::Shape("frames differ in geometry".into()));
        }
    }
    RawClip::new(frames.iter().map(Frame::to_u8).collect(), h, w, colorspace, fps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        let clip = RawClip::new(vec![vec![0, 128, 255, 7]], 2, 2, Colorspace::Gray, Fps::default()).unwrap();
        let f = &to_frames(&clip)[0];
        assert_eq!(f.tensor().data()[0], 0.0);
        assert_eq!(f.tensor().data()[2], 1.0);
        assert!((f.tensor().data()[1] - 0.50196).abs() < 1e-5);
        assert_eq!(f.tensor().data()[1], 128.0 / 255.0);
    }

    #[test]
    fn every_sample_survives_normalization() {
        let all: Vec<u8> = (0..=255).collect();
        let clip = RawClip::new(vec![all.clone()], 16, 16, Colorspace::Gray, Fps::default()).unwrap();
        let back = from_frames(&to_frames(&clip), clip.fps).unwrap();
        assert_eq!(back.frames()[0], all);
    }
}
