//! Raw numeric kernels shared by the autograd graph and the plain-data API.
//!
//! Everything here works on flat slices; `C×H×W` maps are stored channel-major
//! so one spatial column `V[:, h, w]` is strided by `H·W`.

/// Norm guard for cosine similarity and pooling denominators.
pub const EPS: f64 = 1e-8;

/// `C ← A·B (+ C)` where `A` is `m×k` and `B` is `k×n`, row-major.
///
/// `a_t` / `b_t` mean the operand is stored transposed (`k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
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

/// Geometry of a square-kernel convolution over a `C×H×W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfold `input` into a `(C·k·k) × (Ho·Wo)` patch matrix.
pub fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let mut cols = vec![0.0; g.col_rows() * ho * wo];
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto a `C×H×W` map.
pub fn col2im(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * wo..(oy + 1) * wo];
                    for (ox, s) in src_row.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-position cosine similarity between the columns of a `C×HW` map and `query`.
///
/// Positions where either norm is at most [`EPS`] get similarity 0.
/// Returns `(similarity, column_norms, query_norm)`.
pub fn cosine_map(features: &[f64], channels: usize, query: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    debug_assert_eq!(query.len(), channels);
    let hw = features.len() / channels.max(1);
    let mut dots = vec![0.0; hw];
    let mut sq = vec![0.0; hw];
    for (c, &q) in query.iter().enumerate() {
        let row = &features[c * hw..(c + 1) * hw];
        for ((d, s), &v) in dots.iter_mut().zip(sq.iter_mut()).zip(row) {
            *d += v * q;
            *s += v * v;
        }
    }
    let qn = norm(query);
    let norms: Vec<f64> = sq.into_iter().map(f64::sqrt).collect();
    let sims = dots
        .iter()
        .zip(&norms)
        .map(|(&d, &vn)| {
            if vn <= EPS || qn <= EPS {
                0.0
            } else {
                (d / (vn * qn)).clamp(-1.0, 1.0)
            }
        })
        .collect();
    (sims, norms, qn)
}

/// Pooling weights derived from a signed heatmap: `(m + 1) / 2`.
pub fn pooling_weight(m: f64) -> f64 {
    (m + 1.0) / 2.0
}

/// Heatmap-weighted average of the columns of a `C×HW` map.
///
/// Returns the prototype and the weight total `Σ w` (before the `EPS` floor).
pub fn weighted_pool(features: &[f64], channels: usize, heatmap: &[f64]) -> (Vec<f64>, f64) {
    let hw = heatmap.len();
    debug_assert_eq!(features.len(), channels * hw);
    let weights: Vec<f64> = heatmap.iter().map(|&m| pooling_weight(m)).collect();
    let total: f64 = weights.iter().sum();
    let denom = total.max(EPS);
    let proto = (0..channels)
        .map(|c| dot(&features[c * hw..(c + 1) * hw], &weights) / denom)
        .collect();
    (proto, total)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_transpose_modes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let expected = naive_matmul(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (lhs, a_t) in [(&a, false), (&at, true)] {
            for (rhs, b_t) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, lhs, a_t, rhs, b_t, &mut c, false);
                for (x, y) in c.iter().zip(&expected) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        let mut c = expected.clone();
        gemm(m, k, n, &a, false, &b, false, &mut c, true);
        for (x, y) in c.iter().zip(&expected) {
            assert!((x - 2.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 6,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 5 * 6).map(|i| (i as f64 * 0.13).sin()).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.29).cos()).collect();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        // <im2col(x), y> == <x, col2im(y)>
        assert!((dot(&cols, &y) - dot(&x, &back)).abs() < 1e-10);
    }

    #[test]
    fn cosine_map_zero_guard() {
        let (sims, _, _) = cosine_map(&[0.0; 8], 2, &[1.0, 0.0]);
        assert!(sims.iter().all(|&s| s == 0.0));
        let (sims, _, _) = cosine_map(&[1.0, 2.0, 3.0, 4.0], 2, &[0.0, 0.0]);
        assert!(sims.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!(bce_with_logit(800.0, 1.0).abs() < 1e-12);
        assert!(bce_with_logit(-800.0, 0.0).abs() < 1e-12);
        assert!((bce_with_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
