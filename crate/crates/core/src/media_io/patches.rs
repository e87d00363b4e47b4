use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::media_io::{frame_from_u8, Frame, RawClip};

/// Top-left corner of a square patch in a given frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchCoord {
    pub frame: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Debug)]
pub struct PatchPair {
    pub coord: PatchCoord,
    pub lq: Frame,
    pub gt: Frame,
}

/// Seeded patch corners inside a `frames x height x width` volume.
pub fn sample_patch_coords(
    frames: usize,
    height: usize,
    width: usize,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PatchCoord>> {
    if size == 0 || size > height.min(width) {
        return Err(Error::InvalidInput(format!(
            "patch size {size} does not fit a {height}x{width} frame"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| PatchCoord {
            frame: rng.gen_range(0..frames),
            y: rng.gen_range(0..=height - size),
            x: rng.gen_range(0..=width - size),
        })
        .collect())
}

fn cut(clip: &RawClip, c: PatchCoord, size: usize) -> Frame {
    let (ch, h, w) = (clip.channels(), clip.height(), clip.width());
    let src = &clip.frames()[c.frame];
    let mut out = Vec::with_capacity(ch * size * size);
    for ci in 0..ch {
        for y in c.y..c.y + size {
            let row = (ci * h + y) * w;
            out.extend_from_slice(&src[row + c.x..row + c.x + size]);
        }
    }
    frame_from_u8(&out, ch, size, size)
}

/// Aligned LQ/GT patches cut at identical coordinates.
pub fn sample_patches(lq: &RawClip, gt: &RawClip, size: usize, count: usize, seed: u64) -> Result<Vec<PatchPair>> {
    ensure_shape!(lq.same_geometry(gt), "lq and gt clips are not aligned");
    let coords = sample_patch_coords(lq.frame_count(), lq.height(), lq.width(), size, count, seed)?;
    Ok(coords
        .into_iter()
        .map(|coord| PatchPair {
            coord,
            lq: cut(lq, coord, size),
            gt: cut(gt, coord, size),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_io::{Colorspace, Fps};

    fn ramp(frames: usize, h: usize, w: usize, offset: u8) -> RawClip {
        let f = (0..frames)
            .map(|t| {
                (0..h * w)
                    .map(|i| (i as u8).wrapping_add(t as u8).wrapping_add(offset))
                    .collect()
            })
            .collect();
        RawClip::new(f, h, w, Colorspace::Gray, Fps::default()).unwrap()
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = sample_patch_coords(5, 40, 30, 16, 1000, 9).unwrap();
        let b = sample_patch_coords(5, 40, 30, 16, 1000, 9).unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert!(c.frame < 5 && c.y + 16 <= 40 && c.x + 16 <= 30);
        }
        assert!(sample_patch_coords(5, 40, 30, 16, 0, 9).unwrap().is_empty());
        assert!(sample_patch_coords(5, 40, 30, 31, 1, 9).is_err());
    }

    #[test]
    fn patches_are_aligned() {
        let (lq, gt) = (ramp(3, 20, 20, 0), ramp(3, 20, 20, 0));
        for p in sample_patches(&lq, &gt, 8, 20, 1).unwrap() {
            assert_eq!(p.lq, p.gt);
            let expected = ((p.coord.y * 20 + p.coord.x) as u8).wrapping_add(p.coord.frame as u8);
            assert_eq!(p.lq.tensor().data()[0], expected as f64 / 255.0);
        }
    }
}
