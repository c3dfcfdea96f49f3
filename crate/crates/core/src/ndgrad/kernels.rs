//! Dense NCHW kernels used by the graph ops.

use super::tensor::Real;
use crate::imaging::corner_aligned_taps;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(n: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize) -> Self {
        let pad = k / 2;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Self { n, cin, h, w, cout, k, stride, pad, oh, ow }
    }

    /// Output index range `[lo, hi)` whose input coordinate
    /// `o * stride + tap - pad` lands inside `[0, len)`.
    #[inline]
    fn valid(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        // smallest o with o*s + tap >= pad
        let lo = if tap >= self.pad { 0 } else { (self.pad - tap).div_ceil(s) };
        // largest o with o*s + tap - pad <= len - 1
        let hi = if len + self.pad < tap + 1 { 0 } else { ((len + self.pad - tap - 1) / s + 1).min(out_len) };
        (lo.min(hi), hi)
    }
}

/// Patch matrix of one image: row `r` holds the `cin * k * k` inputs seen by
/// output position `r`, zero where the window leaves the image.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let kk = g.cin * g.k * g.k;
    col.iter_mut().for_each(|v| *v = T::ZERO);
    for ci in 0..g.cin {
        let inp = &x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid(kx, g.w, g.ow);
                let c = (ci * g.k + ky) * g.k + kx;
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in xlo..xhi {
                        col[(oy * g.ow + ox) * kk + c] = inp[iy * g.w + ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let kk = g.cin * g.k * g.k;
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid(kx, g.w, g.ow);
                let c = (ci * g.k + ky) * g.k + kx;
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in xlo..xhi {
                        dst[iy * g.w + ox * g.stride + kx - g.pad] += col[(oy * g.ow + ox) * kk + c];
                    }
                }
            }
        }
    }
}

/// `[cout, K]` to `[K, cout]`.
fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.cin * g.k * g.k);
    let wt_t = transpose(wt, g.cout, kk);
    let mut col = vec![T::ZERO; ohw * kk];
    let mut rows = vec![T::ZERO; ohw * g.cout];
    let mut out = vec![T::ZERO; g.n * g.cout * ohw];
    for b in 0..g.n {
        im2col(g, &x[b * g.cin * hw..][..g.cin * hw], &mut col);
        for (r, orow) in rows.chunks_exact_mut(g.cout).enumerate() {
            match bias {
                Some(bias) => orow.copy_from_slice(bias),
                None => orow.iter_mut().for_each(|v| *v = T::ZERO),
            }
            for (c, &a) in col[r * kk..][..kk].iter().enumerate() {
                if a != T::ZERO {
                    axpy(a, &wt_t[c * g.cout..][..g.cout], orow);
                }
            }
        }
        let plane = &mut out[b * g.cout * ohw..][..g.cout * ohw];
        for r in 0..ohw {
            for co in 0..g.cout {
                plane[co * ohw + r] = rows[r * g.cout + co];
            }
        }
    }
    out
}

/// Gradients of a convolution: `(d input, d weight, d bias)`.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    wt: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.cin * g.k * g.k);
    let mut dx = if need_dx { Some(vec![T::ZERO; g.n * g.cin * hw]) } else { None };
    let mut dw_t = vec![T::ZERO; wt.len()];
    let mut db = vec![T::ZERO; g.cout];
    let mut col = vec![T::ZERO; ohw * kk];
    let mut dcol = vec![T::ZERO; ohw * kk];
    let mut grows = vec![T::ZERO; ohw * g.cout];
    for b in 0..g.n {
        im2col(g, &x[b * g.cin * hw..][..g.cin * hw], &mut col);
        let gplane = &dy[b * g.cout * ohw..][..g.cout * ohw];
        for co in 0..g.cout {
            for r in 0..ohw {
                grows[r * g.cout + co] = gplane[co * ohw + r];
            }
        }
        for (r, grow) in grows.chunks_exact(g.cout).enumerate() {
            axpy(T::ONE, grow, &mut db);
            for (c, &a) in col[r * kk..][..kk].iter().enumerate() {
                if a != T::ZERO {
                    axpy(a, grow, &mut dw_t[c * g.cout..][..g.cout]);
                }
            }
            if need_dx {
                let drow = &mut dcol[r * kk..][..kk];
                drow.iter_mut().for_each(|v| *v = T::ZERO);
                for (co, &gv) in grow.iter().enumerate() {
                    if gv != T::ZERO {
                        axpy(gv, &wt[co * kk..][..kk], drow);
                    }
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            col2im(g, &dcol, &mut dx[b * g.cin * hw..][..g.cin * hw]);
        }
    }
    (dx, transpose(&dw_t, kk, g.cout), db)
}

pub(crate) struct Taps<T> {
    pub ys: Vec<(usize, usize, T, T)>,
    pub xs: Vec<(usize, usize, T, T)>,
}

pub(crate) fn taps<T: Real>(h: usize, w: usize, oh: usize, ow: usize) -> Taps<T> {
    let conv = |v: Vec<(usize, usize, f64, f64)>| {
        v.into_iter().map(|(a, b, g, f)| (a, b, T::from_f64(f), T::from_f64(g))).collect()
    };
    Taps { ys: conv(corner_aligned_taps(h, oh)), xs: conv(corner_aligned_taps(w, ow)) }
}

/// Corner-aligned bilinear resize of every plane; same arithmetic as
/// [`crate::imaging::resize_bilinear`].
pub(crate) fn upsample_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let t = taps::<T>(h, w, oh, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        for &(y0, y1, fy, gy) in &t.ys {
            for &(x0, x1, fx, gx) in &t.xs {
                let a = src[y0 * w + x0];
                let b = src[y0 * w + x1];
                let c = src[y1 * w + x0];
                let d = src[y1 * w + x1];
                let top = a * gx + b * fx;
                let bottom = c * gx + d * fx;
                out.push(top * gy + bottom * fy);
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let t = taps::<T>(h, w, oh, ow);
    let mut dx = vec![T::ZERO; planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..][..h * w];
        let g = &dy[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, fy, gy)) in t.ys.iter().enumerate() {
            for (ox, &(x0, x1, fx, gx)) in t.xs.iter().enumerate() {
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += v * gy * gx;
                dst[y0 * w + x1] += v * gy * fx;
                dst[y1 * w + x0] += v * fy * gx;
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}
