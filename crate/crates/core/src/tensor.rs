//! Dense row-major `f64` arrays.
//!
//! Feature maps are stored channel-first as `[channels, height, width]`.
//! Convolution weights use `[out, in, k, k]`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn try_from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        ensure_shape!(
            shape.iter().product::<usize>() == data.len(),
            "{} values cannot fill shape {:?}",
            data.len(),
            shape
        );
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a [C, H, W] tensor");
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    /// Borrow one channel plane of a `[C, H, W]` tensor.
    pub fn plane(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let (_, h, w) = self.chw();
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        ensure_shape!(self.shape == other.shape, "{:?} vs {:?}", self.shape, other.shape);
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// In-place `self += other`. Panics on shape mismatch.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        ensure_shape!(!parts.is_empty(), "concat of zero tensors");
        let (_, h, w) = parts[0].chw();
        let mut c_total = 0;
        for p in parts {
            let (c, ph, pw) = p.chw();
            ensure_shape!(ph == h && pw == w, "concat spatial mismatch");
            c_total += c;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_vec(&[c_total, h, w], data))
    }

    /// Channel range `[start, end)` of a `[C, H, W]` tensor.
    pub fn channel_slice(&self, start: usize, end: usize) -> Tensor {
        let (_, h, w) = self.chw();
        Tensor::from_vec(&[end - start, h, w], self.data[start * h * w..end * h * w].to_vec())
    }

    /// Spatial crop of a `[C, H, W]` tensor.
    pub fn crop(&self, y0: usize, x0: usize, ch: usize, cw: usize) -> Tensor {
        let (c, h, w) = self.chw();
        assert!(y0 + ch <= h && x0 + cw <= w, "crop out of bounds");
        let mut data = Vec::with_capacity(c * ch * cw);
        for ci in 0..c {
            for y in y0..y0 + ch {
                let row = (ci * h + y) * w;
                data.extend_from_slice(&self.data[row + x0..row + x0 + cw]);
            }
        }
        Tensor::from_vec(&[c, ch, cw], data)
    }

    /// One of the eight flips/rotations of a square `[C, H, W]` map: bit 0
    /// flips rows, bit 1 flips columns, bit 2 transposes afterwards.
    pub fn dihedral(&self, code: u8) -> Tensor {
        let (c, h, w) = self.chw();
        assert!(code & 4 == 0 || h == w, "transpose needs a square map");
        let mut out = Tensor::zeros(&self.shape);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = if code & 1 != 0 { h - 1 - y } else { y };
                    let sx = if code & 2 != 0 { w - 1 - x } else { x };
                    let (dy, dx) = if code & 4 != 0 { (x, y) } else { (y, x) };
                    out.data[(ci * h + dy) * w + dx] = self.data[(ci * h + sy) * w + sx];
                }
            }
        }
        out
    }
}
