//! The `CRDSRAW1` clip container.
//!
//! Layout: 8 magic bytes, a little-endian `u32` header length, a UTF-8 JSON
//! header, then `frames * channels * height * width` planar 8-bit samples
//! (frame-major, then channel-major).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CRDSRAW1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Colorspace {
    #[serde(rename = "GRAY")]
    Gray,
    #[serde(rename = "RGB")]
    Rgb,
}

impl Colorspace {
    pub fn channels(self) -> usize {
        match self {
            Colorspace::Gray => 1,
            Colorspace::Rgb => 3,
        }
    }

    pub fn from_channels(c: usize) -> Result<Self> {
        match c {
            1 => Ok(Colorspace::Gray),
            3 => Ok(Colorspace::Rgb),
            _ => Err(Error::InvalidInput(format!("channel count must be 1 or 3, got {c}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Default for Fps {
    fn default() -> Self {
        Fps { num: 30, den: 1 }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    fps: [u32; 2],
    colorspace: Colorspace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bit_depth: Option<u32>,
}

/// A stored 8-bit clip. Each frame holds `channels * height * width`
/// samples in planar order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawClip {
    frames: Vec<Vec<u8>>,
    height: usize,
    width: usize,
    colorspace: Colorspace,
    pub fps: Fps,
}

impl RawClip {
    pub fn new(frames: Vec<Vec<u8>>, height: usize, width: usize, colorspace: Colorspace, fps: Fps) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("clip must hold at least one frame".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("clip dimensions must be non-zero".into()));
        }
        let plane = colorspace.channels() * height * width;
        if let Some(i) = frames.iter().position(|f| f.len() != plane) {
            return Err(Error::InvalidInput(format!(
                "frame {i} holds {} samples, expected {plane}",
                frames[i].len()
            )));
        }
        Ok(RawClip {
            frames,
            height,
            width,
            colorspace,
            fps,
        })
    }

    pub fn frames(&self) -> &[Vec<u8>] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.colorspace.channels()
    }

    pub fn colorspace(&self) -> Colorspace {
        self.colorspace
    }

    pub fn same_geometry(&self, other: &RawClip) -> bool {
        self.frames.len() == other.frames.len()
            && self.height == other.height
            && self.width == other.width
            && self.colorspace == other.colorspace
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            frames: self.frames.len(),
            height: self.height,
            width: self.width,
            channels: self.channels(),
            fps: [self.fps.num, self.fps.den],
            colorspace: self.colorspace,
            bit_depth: None,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + self.frames.len() * self.frames[0].len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for f in &self.frames {
            out.extend_from_slice(f);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing CRDSRAW1 magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < hlen {
            return Err(Error::Corrupt("header truncated".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if let Some(bits) = header.bit_depth {
            if bits != 8 {
                return Err(Error::Format(format!(
                    "only 8-bit samples are supported, header declares {bits}-bit"
                )));
            }
        }
        let colorspace = header.colorspace;
        if colorspace.channels() != header.channels {
            return Err(Error::Format(format!(
                "colorspace {:?} inconsistent with {} channels",
                colorspace, header.channels
            )));
        }
        let plane = header.channels * header.height * header.width;
        let payload = &body[hlen..];
        let expected = header.frames * plane;
        if payload.len() != expected {
            return Err(Error::Corrupt(format!(
                "payload holds {} bytes, header declares {} frames ({expected} bytes)",
                payload.len(),
                header.frames
            )));
        }
        let frames = if plane == 0 {
            Vec::new()
        } else {
            payload.chunks_exact(plane).map(<[u8]>::to_vec).collect()
        };
        RawClip::new(
            frames,
            header.height,
            header.width,
            colorspace,
            Fps {
                num: header.fps[0],
                den: header.fps[1],
            },
        )
        .map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<RawClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawClip::from_bytes(&bytes)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save_clip(clip: &RawClip, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &clip.to_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(frames: usize, h: usize, w: usize) -> RawClip {
        RawClip::new(vec![vec![0; h * w]; frames], h, w, Colorspace::Gray, Fps::default()).unwrap()
    }

    #[test]
    fn zero_clip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.crds");
        save_clip(&zeros(2, 4, 4), &p).unwrap();
        let clip = load_clip(&p).unwrap();
        assert_eq!(clip.frame_count(), 2);
        assert!(clip.frames().iter().all(|f| f.iter().all(|&v| v == 0)));
        let original = fs::read(&p).unwrap();
        save_clip(&clip, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), original);
    }

    #[test]
    fn short_payload_is_corrupt() {
        let bytes = zeros(5, 4, 4).to_bytes();
        let truncated = &bytes[..bytes.len() - 16];
        assert!(matches!(RawClip::from_bytes(truncated), Err(Error::Corrupt(_))));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = zeros(1, 4, 4).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(RawClip::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn empty_frame_list_rejected() {
        assert!(RawClip::new(vec![], 4, 4, Colorspace::Gray, Fps::default()).is_err());
    }

    #[test]
    fn sixteen_bit_header_rejected() {
        let json = br#"{"frames":1,"height":2,"width":2,"channels":1,"fps":[30,1],"colorspace":"GRAY","bit_depth":16}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(RawClip::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let clip = zeros(1, 2, 2);
        let err = save_clip(&clip, "/nonexistent-dir/x/clip.crds").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
