//! Raw numeric kernels shared by forward and backward passes.

/// `c = a · b` (or `c += a · b` when `accumulate`), with `a` logically
/// `m×k` and `b` logically `k×n`. Transposed operands are read in place.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths checked above cover every index the kernel
    // touches for the given dimensions and strides.
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

/// Geometry of a `k_t × k_v` convolution over a `C × T × V` plane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub t_in: usize,
    pub v_in: usize,
    pub kt: usize,
    pub kv: usize,
    pub stride: usize,
    pub padding: usize,
    pub t_out: usize,
    pub v_out: usize,
}

impl ConvGeom {
    pub fn is_pointwise(&self) -> bool {
        self.kt == 1 && self.kv == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.kt * self.kv
    }

    pub fn col_cols(&self) -> usize {
        self.t_out * self.v_out
    }
}

/// Unfold one sample (`C × T × V`) into `[C·kt·kv, T'·V']`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let cols = g.col_cols();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.t_in * g.v_in..(ci + 1) * g.t_in * g.v_in];
        for a in 0..g.kt {
            for c in 0..g.kv {
                let row = (ci * g.kt + a) * g.kv + c;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for to in 0..g.t_out {
                    let ti = (to * g.stride + a) as isize - g.padding as isize;
                    let out = &mut dst[to * g.v_out..(to + 1) * g.v_out];
                    if ti < 0 || ti as usize >= g.t_in {
                        out.iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        let src = &plane[ti as usize * g.v_in + c..ti as usize * g.v_in + c + g.v_out];
                        out.copy_from_slice(src);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `dx`.
pub(crate) fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let cols = g.col_cols();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.t_in * g.v_in..(ci + 1) * g.t_in * g.v_in];
        for a in 0..g.kt {
            for c in 0..g.kv {
                let row = (ci * g.kt + a) * g.kv + c;
                let src = &col[row * cols..(row + 1) * cols];
                for to in 0..g.t_out {
                    let ti = (to * g.stride + a) as isize - g.padding as isize;
                    if ti < 0 || ti as usize >= g.t_in {
                        continue;
                    }
                    let base = ti as usize * g.v_in + c;
                    for (d, s) in plane[base..base + g.v_out]
                        .iter_mut()
                        .zip(&src[to * g.v_out..(to + 1) * g.v_out])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Split a shape around `axis` into `(outer, len, inner)` extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
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

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_every_transpose_combination() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let lhs = if ta { &at } else { &a };
            let rhs = if tb { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, lhs, ta, rhs, tb, &mut c, false);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            c_in: 2,
            t_in: 5,
            v_in: 3,
            kt: 3,
            kv: 1,
            stride: 2,
            padding: 1,
            t_out: 3,
            v_out: 3,
        };
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut col = vec![0.0; y.len()];
        im2col(&x, &g, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        col2im(&y, &g, &mut dx);
        let rhs: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
