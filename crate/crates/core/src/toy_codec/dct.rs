use std::f64::consts::PI;

use crate::error::{ensure_shape, Result};

/// Orthonormal 2-D DCT-II on square `n x n` blocks.
#[derive(Clone, Debug)]
pub struct Dct {
    n: usize,
    /// `basis[k * n + i] = a_k cos(pi (2i + 1) k / 2n)`
    basis: Vec<f64>,
}

impl Dct {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let a = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                basis[k * n + i] = a * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
            }
        }
        Dct { n, basis }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// `C * block * C^T`
    pub fn forward(&self, block: &[f64]) -> Result<Vec<f64>> {
        ensure_shape!(
            block.len() == self.n * self.n,
            "block of {} samples, expected {}x{}",
            block.len(),
            self.n,
            self.n
        );
        Ok(self.apply(block, false))
    }

    /// `C^T * coeffs * C`
    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        ensure_shape!(
            coeffs.len() == self.n * self.n,
            "block of {} coefficients, expected {}x{}",
            coeffs.len(),
            self.n,
            self.n
        );
        Ok(self.apply(coeffs, true))
    }

    fn apply(&self, src: &[f64], inverse: bool) -> Vec<f64> {
        let n = self.n;
        let b = |k: usize, i: usize| {
            if inverse {
                self.basis[i * n + k]
            } else {
                self.basis[k * n + i]
            }
        };
        // rows
        let mut tmp = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += b(k, i) * src[r * n + i];
                }
                tmp[r * n + k] = acc;
            }
        }
        // columns
        let mut out = vec![0.0; n * n];
        for c in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += b(k, i) * tmp[i * n + c];
                }
                out[k * n + c] = acc;
            }
        }
        out
    }
}

/// Convenience wrappers for 8x8 blocks.
pub fn dct2(block: &[f64]) -> Result<Vec<f64>> {
    Dct::new(8).forward(block)
}

pub fn idct2(coeffs: &[f64]) -> Result<Vec<f64>> {
    Dct::new(8).inverse(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_block_is_pure_dc() {
        let c = dct2(&[0.3; 64]).unwrap();
        assert!((c[0] - 8.0 * 0.3).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Dct::new(8);
        for _ in 0..50 {
            let b: Vec<f64> = (0..64).map(|_| rng.gen_range(-255.0..255.0)).collect();
            let c = d.forward(&b).unwrap();
            let back = d.inverse(&c).unwrap();
            let err = b.iter().zip(&back).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err < 1e-9, "{err}");
            let (e1, e2): (f64, f64) = (b.iter().map(|v| v * v).sum(), c.iter().map(|v| v * v).sum());
            assert!((e1 - e2).abs() / e1 < 1e-12 && (e1 - e2).abs() < 1e-9 * e1.max(1.0));
        }
    }

    #[test]
    fn matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
        let c = Dct::new(4).forward(&b).unwrap();
        let a = |k: usize| if k == 0 { 0.5 } else { (0.5f64).sqrt() };
        for u in 0..4 {
            for v in 0..4 {
                let mut s = 0.0;
                for y in 0..4 {
                    for x in 0..4 {
                        s += b[y * 4 + x]
                            * (PI * (2 * y + 1) as f64 * u as f64 / 8.0).cos()
                            * (PI * (2 * x + 1) as f64 * v as f64 / 8.0).cos();
                    }
                }
                assert!((c[u * 4 + v] - a(u) * a(v) * s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn size_mismatch() {
        assert!(dct2(&[0.0; 63]).is_err());
        assert!(idct2(&[0.0; 65]).is_err());
    }
}
