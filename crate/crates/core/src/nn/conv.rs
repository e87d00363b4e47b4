//! Stride-1, zero-padded "same" 2-D convolution kernels.

/// `c = a * b (+ c if accumulate)` where `a` is `m x k` and `b` is `k x n`,
/// either operand optionally transposed in storage. Row-major throughout.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserted lengths cover every element addressed by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `[cin, h, w]` into `[cin * k * k, h * w]` patches.
pub fn im2col(x: &[f64], cin: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; cin * k * k * hw];
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let (dy, dx) = (ky as isize - r, kx as isize - r);
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = row + y * w;
                    for xx in x_lo..x_hi {
                        cols[dst + xx] = plane[src + (xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back onto `[cin, h, w]`.
pub fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut x = vec![0.0; cin * hw];
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let (dy, dx) = (ky as isize - r, kx as isize - r);
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = c * hw + sy as usize * w;
                    let src = row + y * w;
                    for xx in x_lo..x_hi {
                        x[dst + (xx as isize + dx) as usize] += cols[src + xx];
                    }
                }
            }
        }
    }
    x
}

/// `x: [cin, h, w]`, `weight: [cout, cin, k, k]`, `bias: [cout]`.
pub fn conv2d_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; cout * hw];
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(bv);
        }
    }
    let kk = cin * k * k;
    if k == 1 {
        gemm(cout, kk, hw, weight, false, x, false, &mut out, bias.is_some());
    } else {
        let cols = im2col(x, cin, h, w, k);
        gemm(cout, kk, hw, weight, false, &cols, false, &mut out, bias.is_some());
    }
    out
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    dout: &[f64],
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    need: (bool, bool, bool),
) -> ConvGrads {
    let hw = h * w;
    let kk = cin * k * k;
    let cols_owned;
    let cols: &[f64] = if k == 1 {
        x
    } else if need.1 {
        cols_owned = im2col(x, cin, h, w, k);
        &cols_owned
    } else {
        &[]
    };
    let dw = need.1.then(|| {
        let mut dw = vec![0.0; cout * kk];
        gemm(cout, hw, kk, dout, false, cols, true, &mut dw, false);
        dw
    });
    let dx = need.0.then(|| {
        let mut dcols = vec![0.0; kk * hw];
        gemm(kk, cout, hw, weight, true, dout, false, &mut dcols, false);
        if k == 1 {
            dcols
        } else {
            col2im(&dcols, cin, h, w, k)
        }
    });
    let db = need
        .2
        .then(|| (0..cout).map(|o| dout[o * hw..(o + 1) * hw].iter().sum()).collect());
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize, k: usize) -> Vec<f64> {
        let r = (k / 2) as isize;
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - r, xx + kx - r);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * cin + c) * k + ky as usize) * k + kx as usize]
                                    * x[(c * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &(cin, cout, h, w, k) in &[(3, 4, 5, 7, 3), (2, 5, 4, 4, 1), (1, 1, 1, 3, 3)] {
            let x: Vec<f64> = (0..cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..cout * cin * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d_forward(&x, cin, h, w, &wt, cout, k, None);
            let want = naive(&x, cin, h, w, &wt, cout, k);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, h, w, k) = (2, 5, 6, 3);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..c * k * k * h * w).map(|_| rng.gen()).collect();
        let lhs: f64 = im2col(&x, c, h, w, k).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, c, h, w, k)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
