use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::media_io::{load_clip, save_clip, to_frames, write_atomic, RawClip};
use crate::synth::{synthesize_clip, SynthConfig};
use crate::tensor::Tensor;
use crate::toy_codec::{encode_clip, CodecConfig};

pub const CLIP_EXT: &str = "craw";
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct PairedClip {
    pub name: String,
    pub gt: RawClip,
    pub lq: RawClip,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub gt: String,
    pub lq: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub codec: CodecConfig,
    /// Generator settings when the clips are procedural.
    pub synth: Option<SynthConfig>,
    pub seed: Option<u64>,
    pub clips: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub codec: CodecConfig,
    pub synth: Option<SynthConfig>,
    pub seed: Option<u64>,
    pub clips: Vec<PairedClip>,
}

/// Per-clip generator seed.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

impl Dataset {
    /// Compress each ground-truth clip with the toy codec.
    pub fn from_gt(named: Vec<(String, RawClip)>, codec: CodecConfig) -> Result<Self> {
        codec.validate()?;
        let clips = named
            .into_iter()
            .map(|(name, gt)| {
                let (lq, _) = encode_clip(&gt, &codec)?;
                Ok(PairedClip { name, gt, lq })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            codec,
            synth: None,
            seed: None,
            clips,
        })
    }

    pub fn synthesize(count: usize, synth: &SynthConfig, codec: CodecConfig, seed: u64) -> Result<Self> {
        let named = (0..count)
            .map(|i| (format!("clip{i:03}"), synthesize_clip(synth, clip_seed(seed, i))))
            .collect();
        let mut ds = Dataset::from_gt(named, codec)?;
        ds.synth = Some(*synth);
        ds.seed = Some(seed);
        Ok(ds)
    }

    /// Every clip file in `dir` (sorted by name) as ground truth.
    pub fn from_dir(dir: &Path, codec: CodecConfig) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == CLIP_EXT))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no .{CLIP_EXT} clips in {}",
                dir.display()
            )));
        }
        let named = paths
            .iter()
            .map(|p| {
                let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Ok((name, load_clip(p)?))
            })
            .collect::<Result<_>>()?;
        Dataset::from_gt(named, codec)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            codec: self.codec,
            synth: self.synth,
            seed: self.seed,
            clips: self
                .clips
                .iter()
                .map(|c| ManifestEntry {
                    name: c.name.clone(),
                    gt: format!("gt/{}.{CLIP_EXT}", c.name),
                    lq: format!("lq/{}.{CLIP_EXT}", c.name),
                    frames: c.gt.frame_count(),
                    height: c.gt.height(),
                    width: c.gt.width(),
                    channels: c.gt.channels(),
                })
                .collect(),
        }
    }

    /// `gt/NAME.craw`, `lq/NAME.craw` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for sub in ["gt", "lq"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let manifest = self.manifest();
        for (c, e) in self.clips.iter().zip(&manifest.clips) {
            save_clip(&c.gt, dir.join(&e.gt))?;
            save_clip(&c.lq, dir.join(&e.lq))?;
        }
        write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
        let clips = manifest
            .clips
            .iter()
            .map(|e| {
                let gt = load_clip(dir.join(&e.gt))?;
                let lq = load_clip(dir.join(&e.lq))?;
                ensure_shape!(gt.same_geometry(&lq), "clip {} gt and lq differ in geometry", e.name);
                if (gt.frame_count(), gt.height(), gt.width()) != (e.frames, e.height, e.width) {
                    return Err(Error::Manifest(format!(
                        "clip {} does not match its manifest entry",
                        e.name
                    )));
                }
                Ok(PairedClip {
                    name: e.name.clone(),
                    gt,
                    lq,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            codec: manifest.codec,
            synth: manifest.synth,
            seed: manifest.seed,
            clips,
        })
    }
}

/// A training sample: `frames` consecutive aligned crops, flipped or
/// transposed at random with one transform shared by all frames.
#[derive(Clone, Debug)]
pub struct Window {
    pub lq: Vec<Tensor>,
    pub gt: Vec<Tensor>,
}

/// Clips decoded to `[0, 1]` tensors once, for fast window sampling.
pub struct WindowSampler {
    clips: Vec<(Vec<Tensor>, Vec<Tensor>)>,
    frames: usize,
    patch: usize,
}

impl WindowSampler {
    pub fn new(ds: &Dataset, frames: usize, patch: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let clips: Vec<_> = ds
            .clips
            .iter()
            .map(|c| {
                let t = |clip: &RawClip| to_frames(clip).into_iter().map(|f| f.into_tensor()).collect::<Vec<_>>();
                (t(&c.lq), t(&c.gt))
            })
            .collect();
        for (c, (lq, _)) in ds.clips.iter().zip(&clips) {
            if lq.len() < frames || c.lq.height() < patch || c.lq.width() < patch {
                return Err(Error::InvalidInput(format!(
                    "clip {} ({} frames of {}x{}) cannot hold {frames} frames of {patch}x{patch}",
                    c.name,
                    lq.len(),
                    c.lq.height(),
                    c.lq.width()
                )));
            }
        }
        Ok(WindowSampler { clips, frames, patch })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Window {
        let (lq, gt) = &self.clips[rng.gen_range(0..self.clips.len())];
        let start = rng.gen_range(0..=lq.len() - self.frames);
        let (_, h, w) = lq[0].chw();
        let y = rng.gen_range(0..=h - self.patch);
        let x = rng.gen_range(0..=w - self.patch);
        let code = rng.gen_range(0..8u8);
        let crop = |v: &[Tensor]| {
            v[start..start + self.frames]
                .iter()
                .map(|t| t.crop(y, x, self.patch, self.patch).dihedral(code))
                .collect()
        };
        Window {
            lq: crop(lq),
            gt: crop(gt),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> SynthConfig {
        SynthConfig {
            height: 16,
            width: 16,
            frames: 4,
            ..Default::default()
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = Dataset::synthesize(3, &small(), CodecConfig::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in ds.clips.iter().zip(&back.clips) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.gt.to_bytes(), b.gt.to_bytes());
            assert_eq!(a.lq.to_bytes(), b.lq.to_bytes());
        }
        assert_eq!(fs::read_dir(dir.path().join("gt")).unwrap().count(), 3);
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let a = Dataset::synthesize(2, &small(), CodecConfig::default(), 1).unwrap();
        let b = Dataset::synthesize(2, &small(), CodecConfig::default(), 1).unwrap();
        let c = Dataset::synthesize(2, &small(), CodecConfig::default(), 2).unwrap();
        assert_eq!(a.clips[1].lq.to_bytes(), b.clips[1].lq.to_bytes());
        assert_ne!(a.clips[0].gt.to_bytes(), a.clips[1].gt.to_bytes());
        assert_ne!(a.clips[0].gt.to_bytes(), c.clips[0].gt.to_bytes());
    }

    #[test]
    fn windows_are_aligned_crops() {
        let ds = Dataset::synthesize(2, &small(), CodecConfig::default(), 3).unwrap();
        let s = WindowSampler::new(&ds, 3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let w = s.sample(&mut rng);
            assert_eq!(w.lq.len(), 3);
            assert_eq!(w.gt[2].shape(), &[1, 8, 8]);
        }
        assert!(WindowSampler::new(&ds, 5, 8).is_err());
    }

    #[test]
    fn windows_share_one_transform() {
        let ds = Dataset::synthesize(1, &small(), CodecConfig::default(), 4).unwrap();
        let s = WindowSampler::new(&ds, 2, 16).unwrap();
        let (lq, gt) = &s.clips[0];
        let mut seen = [false; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..64 {
            let w = s.sample(&mut rng);
            let start = (0..=lq.len() - 2).find(|&i| (0..8).any(|c| gt[i].dihedral(c) == w.gt[0])).unwrap();
            let code = (0..8u8).find(|&c| gt[start].dihedral(c) == w.gt[0]).unwrap();
            seen[code as usize] = true;
            for f in 0..2 {
                assert_eq!(gt[start + f].dihedral(code), w.gt[f]);
                assert_eq!(lq[start + f].dihedral(code), w.lq[f]);
            }
        }
        assert!(seen.iter().all(|&b| b));
        assert!(WindowSampler::new(&ds, 2, 17).is_err());
    }
}
