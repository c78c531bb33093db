//! Raw loops behind the tape primitives. Shapes are validated by the caller.

use crate::scalar::Scalar;

/// `[m, k] x [k, n] -> [m, n]`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g [m, n] x b^T [n, k] -> [m, k]`.
pub(crate) fn matmul_nt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow
                .iter()
                .zip(brow)
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        }
    }
    out
}

/// `a^T [k, m] x g [m, n] -> [k, n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// Output extents of a `[t, C, H, W]` average pool (channel axis untouched).
pub(crate) fn pool_dims(dims: &[usize], kernel: [usize; 3], stride: [usize; 3]) -> [usize; 4] {
    [
        (dims[0] - kernel[0]) / stride[0] + 1,
        dims[1],
        (dims[2] - kernel[1]) / stride[1] + 1,
        (dims[3] - kernel[2]) / stride[2] + 1,
    ]
}

pub(crate) fn avg_pool<T: Scalar>(
    x: &[T],
    dims: &[usize],
    kernel: [usize; 3],
    stride: [usize; 3],
) -> Vec<T> {
    let [ot, c, oh, ow] = pool_dims(dims, kernel, stride);
    let (h, w) = (dims[2], dims[3]);
    let inv = T::one() / T::lit((kernel[0] * kernel[1] * kernel[2]) as f64);
    let mut out = vec![T::zero(); ot * c * oh * ow];
    for ti in 0..ot {
        for ch in 0..c {
            let obase = (ti * c + ch) * oh * ow;
            for dt in 0..kernel[0] {
                let ibase = ((ti * stride[0] + dt) * c + ch) * h * w;
                for oy in 0..oh {
                    for dy in 0..kernel[1] {
                        let iy = oy * stride[1] + dy;
                        let irow = &x[ibase + iy * w..ibase + (iy + 1) * w];
                        let orow = &mut out[obase + oy * ow..obase + (oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = ox * stride[2];
                            for &v in &irow[ix..ix + kernel[2]] {
                                *o += v;
                            }
                        }
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    out
}

pub(crate) fn avg_pool_backward<T: Scalar>(
    g: &[T],
    dims: &[usize],
    kernel: [usize; 3],
    stride: [usize; 3],
) -> Vec<T> {
    let [ot, c, oh, ow] = pool_dims(dims, kernel, stride);
    let (h, w) = (dims[2], dims[3]);
    let inv = T::one() / T::lit((kernel[0] * kernel[1] * kernel[2]) as f64);
    let mut gx = vec![T::zero(); dims.iter().product()];
    for ti in 0..ot {
        for ch in 0..c {
            let obase = (ti * c + ch) * oh * ow;
            for dt in 0..kernel[0] {
                let ibase = ((ti * stride[0] + dt) * c + ch) * h * w;
                for oy in 0..oh {
                    for dy in 0..kernel[1] {
                        let iy = oy * stride[1] + dy;
                        for ox in 0..ow {
                            let gv = g[obase + oy * ow + ox] * inv;
                            let ix = ox * stride[2];
                            for v in &mut gx[ibase + iy * w + ix..ibase + iy * w + ix + kernel[2]] {
                                *v += gv;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Geometry of a stride-1, zero-padded ("same") 2-D convolution applied to
/// every leading-axis slice of `[n, C_in, H, W]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    fn pads(&self) -> (usize, usize) {
        (self.kh / 2, self.kw / 2)
    }

    /// Valid output range along one axis for kernel tap `k` with padding `p`.
    fn span(len: usize, k: usize, p: usize) -> (usize, usize) {
        // input index = out + k - p must lie in [0, len)
        let lo = p.saturating_sub(k);
        let hi = (len + p).saturating_sub(k).min(len);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d<T: Scalar>(x: &[T], wt: &[T], bias: &[T], g: ConvGeom) -> Vec<T> {
    let (ph, pw) = g.pads();
    let plane = g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    for n in 0..g.n {
        for co in 0..g.cout {
            let obase = (n * g.cout + co) * plane;
            for v in &mut out[obase..obase + plane] {
                *v = bias[co];
            }
            for ci in 0..g.cin {
                let ibase = (n * g.cin + ci) * plane;
                for ky in 0..g.kh {
                    let (y0, y1) = ConvGeom::span(g.h, ky, ph);
                    for kx in 0..g.kw {
                        let wv = wt[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        let (x0, x1) = ConvGeom::span(g.w, kx, pw);
                        for oy in y0..y1 {
                            let iy = oy + ky - ph;
                            let src = &x[ibase + iy * g.w + x0 + kx - pw..ibase + iy * g.w + x1 + kx - pw];
                            let dst = &mut out[obase + oy * g.w + x0..obase + oy * g.w + x1];
                            for (o, &v) in dst.iter_mut().zip(src) {
                                *o += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_b)` for [`conv2d`].
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    gout: &[T],
    g: ConvGeom,
    need_x: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (ph, pw) = g.pads();
    let plane = g.h * g.w;
    let mut gx = if need_x {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); g.cout];
    for n in 0..g.n {
        for co in 0..g.cout {
            let obase = (n * g.cout + co) * plane;
            let go = &gout[obase..obase + plane];
            gb[co] += go.iter().copied().sum::<T>();
            for ci in 0..g.cin {
                let ibase = (n * g.cin + ci) * plane;
                for ky in 0..g.kh {
                    let (y0, y1) = ConvGeom::span(g.h, ky, ph);
                    for kx in 0..g.kw {
                        let widx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                        let wv = wt[widx];
                        let (x0, x1) = ConvGeom::span(g.w, kx, pw);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy + ky - ph;
                            let lo = ibase + iy * g.w + x0 + kx - pw;
                            let hi = ibase + iy * g.w + x1 + kx - pw;
                            let grow = &go[oy * g.w + x0..oy * g.w + x1];
                            acc += x[lo..hi]
                                .iter()
                                .zip(grow)
                                .fold(T::zero(), |s, (&a, &b)| s + a * b);
                            if need_x {
                                for (d, &gv) in gx[lo..hi].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: ConvGeom) -> Vec<f64> {
        let (ph, pw) = (g.kh as isize / 2, g.kw as isize / 2);
        let mut out = vec![0.0; g.n * g.cout * g.h * g.w];
        for n in 0..g.n {
            for co in 0..g.cout {
                for oy in 0..g.h {
                    for ox in 0..g.w {
                        let mut s = b[co];
                        for ci in 0..g.cin {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let iy = oy as isize + ky as isize - ph;
                                    let ix = ox as isize + kx as isize - pw;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    s += w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx]
                                        * x[((n * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                        out[((n * g.cout + co) * g.h + oy) * g.w + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let g = ConvGeom {
            n: 2,
            cin: 3,
            cout: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 3,
        };
        let x: Vec<f64> = (0..g.n * g.cin * g.h * g.w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..g.cout * g.cin * 9).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect();
        let b = vec![0.5, -0.25];
        let fast = conv2d(&x, &w, &b, g);
        let slow = naive_conv(&x, &w, &b, g);
        for (a, e) in fast.iter().zip(&slow) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_variants_agree_with_explicit_transpose() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| 2.0 - i as f64 * 0.25).collect();
        let g: Vec<f64> = (0..m * n).map(|i| (i as f64).sin()).collect();
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        assert_eq!(matmul_nt(&g, &b, m, k, n), matmul(&g, &bt, m, n, k));
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let lhs = matmul_tn(&a, &g, m, k, n);
        let rhs = matmul(&at, &g, k, m, n);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
