//! Low level tensor kernels shared by the layers.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, ArrayViewMut2};

use crate::scalar::Scalar;

/// Output extent of a convolution along one axis.
#[inline]
pub fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// `c = a · b + beta · c`
#[inline]
pub fn gemm<T: Scalar>(a: &ArrayView2<T>, b: &ArrayView2<T>, beta: T, c: &mut ArrayViewMut2<T>) {
    general_mat_mul(T::one(), a, b, beta, c);
}

/// Unfolds zero-padded patches into a `(C·k·k, Ho·Wo)` matrix.
pub fn im2col<T: Scalar>(x: ArrayView3<T>, k: usize, stride: usize, pad: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let mut cols = Array2::<T>::zeros((c * k * k, ho * wo));
    let xs = x.as_standard_layout();
    let src = xs.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("fresh array");
    let n = ho * wo;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let out = &mut dst[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out_row = &mut out[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto a `(C, H, W)` grid.
pub fn col2im<T: Scalar>(
    cols: ArrayView2<T>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let n = ho * wo;
    debug_assert_eq!(cols.dim(), (c * k * k, n));
    let mut out = Array3::<T>::zeros((c, h, w));
    let cs = cols.as_standard_layout();
    let src = cs.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let col = &src[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let col_row = &col[oy * wo..(oy + 1) * wo];
                    for (ox, &v) in col_row.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

pub fn reflect_pad<T: Scalar>(x: ArrayView3<T>, p: usize) -> Array3<T> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h + 2 * p, w + 2 * p), |(ci, i, j)| {
        x[[
            ci,
            reflect(i as isize - p as isize, h),
            reflect(j as isize - p as isize, w),
        ]]
    })
}

pub fn reflect_pad_backward<T: Scalar>(g: ArrayView3<T>, p: usize) -> Array3<T> {
    let (c, hp, wp) = g.dim();
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    let mut out = Array3::<T>::zeros((c, h, w));
    for ((ci, i, j), &v) in g.indexed_iter() {
        let si = reflect(i as isize - p as isize, h);
        let sj = reflect(j as isize - p as isize, w);
        out[[ci, si, sj]] = out[[ci, si, sj]] + v;
    }
    out
}

fn zero_pad<T: Scalar>(x: ArrayView3<T>, p: usize) -> Array3<T> {
    let (c, h, w) = x.dim();
    let mut out = Array3::<T>::zeros((c, h + 2 * p, w + 2 * p));
    out.slice_mut(s![.., p..p + h, p..p + w]).assign(&x);
    out
}

/// Dot product with independent partial sums so it vectorises.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: T = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d = *d + alpha * v;
    }
}

/// Stride-1 convolution computed directly, without an unfolded patch
/// matrix. Returns the output and the zero-padded input.
pub fn conv_direct<T: Scalar>(x: ArrayView3<T>, weight: ArrayView4<T>, pad: usize) -> (Array3<T>, Array3<T>) {
    let (cout, cin, k, _) = weight.dim();
    let xp = zero_pad(x, pad);
    let (_, hp, wp) = xp.dim();
    let (ho, wo) = (hp - k + 1, wp - k + 1);
    let mut out = Array3::<T>::zeros((cout, ho, wo));
    let src = xp.as_slice().expect("fresh array");
    let w = weight.as_standard_layout();
    let w = w.as_slice().expect("standard layout");
    for (co, mut plane) in out.outer_iter_mut().enumerate() {
        let dst = plane.as_slice_mut().expect("fresh array");
        for ci in 0..cin {
            let xs = &src[ci * hp * wp..(ci + 1) * hp * wp];
            for ki in 0..k {
                for kj in 0..k {
                    let a = w[((co * cin + ci) * k + ki) * k + kj];
                    for oy in 0..ho {
                        let row = &xs[(oy + ki) * wp + kj..][..wo];
                        axpy(a, row, &mut dst[oy * wo..(oy + 1) * wo]);
                    }
                }
            }
        }
    }
    (out, xp)
}

/// Backward of [`conv_direct`]: accumulates the weight gradient into
/// `grad_w` and returns the gradient w.r.t. the unpadded input.
pub fn conv_direct_backward<T: Scalar>(
    xp: &Array3<T>,
    weight: ArrayView4<T>,
    pad: usize,
    g: &Array3<T>,
    grad_w: &mut Array4<T>,
) -> Array3<T> {
    let (cout, cin, k, _) = weight.dim();
    let (_, hp, wp) = xp.dim();
    let (_, ho, wo) = g.dim();
    let src = xp.as_slice().expect("fresh array");
    let gs = g.as_standard_layout();
    let gs = gs.as_slice().expect("standard layout");
    let w = weight.as_standard_layout();
    let w = w.as_slice().expect("standard layout");
    let gw = grad_w.as_slice_mut().expect("contiguous gradient");
    let mut dxp = Array3::<T>::zeros((cin, hp, wp));
    let dst = dxp.as_slice_mut().expect("fresh array");
    for co in 0..cout {
        let gp = &gs[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..cin {
            let xs = &src[ci * hp * wp..(ci + 1) * hp * wp];
            let ds = &mut dst[ci * hp * wp..(ci + 1) * hp * wp];
            for ki in 0..k {
                for kj in 0..k {
                    let idx = ((co * cin + ci) * k + ki) * k + kj;
                    let a = w[idx];
                    let mut acc = T::zero();
                    for oy in 0..ho {
                        let grow = &gp[oy * wo..(oy + 1) * wo];
                        let off = (oy + ki) * wp + kj;
                        acc = acc + dot(grow, &xs[off..off + wo]);
                        axpy(a, grow, &mut ds[off..off + wo]);
                    }
                    gw[idx] = gw[idx] + acc;
                }
            }
        }
    }
    if pad == 0 {
        return dxp;
    }
    dxp.slice(s![.., pad..hp - pad, pad..wp - pad]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = Array::from_shape_fn((2, 5, 6), |(a, b, c)| (a * 31 + b * 7 + c) as f64 * 0.1 - 1.0);
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (3, 2, 1), (5, 1, 0)] {
            let cols = im2col(x.view(), k, s, p);
            let y = Array2::from_shape_fn(cols.dim(), |(i, j)| ((i * 13 + j * 3) % 7) as f64 - 3.0);
            let lhs: f64 = (&cols * &y).sum();
            let back = col2im(y.view(), 2, 5, 6, k, s, p);
            let rhs: f64 = (&x * &back).sum();
            assert!((lhs - rhs).abs() < 1e-9, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn reflect_pad_matches_mirror_rule() {
        let x = Array::from_shape_fn((1, 3, 4), |(_, i, j)| (i * 4 + j) as f64);
        let p = reflect_pad(x.view(), 2);
        assert_eq!(p.dim(), (1, 7, 8));
        // row -2 mirrors row 2, column -1 mirrors column 1
        assert_eq!(p[[0, 0, 1]], x[[0, 2, 1]]);
        assert_eq!(p[[0, 6, 7]], x[[0, 0, 1]]);
        let g = Array3::from_elem((1, 7, 8), 1.0);
        let b = reflect_pad_backward(g.view(), 2);
        assert_eq!(b.sum(), 56.0);
    }

    #[test]
    fn direct_conv_matches_unfolded_product() {
        let x = Array::from_shape_fn((3, 7, 9), |(a, b, c)| ((a * 17 + b * 5 + c * 3) % 11) as f64 / 11.0 - 0.5);
        for &(co, k, p) in &[(2, 3, 1), (4, 5, 0), (1, 4, 2)] {
            let w = Array::from_shape_fn((co, 3, k, k), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) % 7) as f64 - 3.0);
            let (out, xp) = conv_direct(x.view(), w.view(), p);
            let cols = im2col(x.view(), k, 1, p);
            let wm = w.view().into_shape_with_order((co, 3 * k * k)).unwrap();
            let reference = wm.dot(&cols);
            let flat = out.view().into_shape_with_order(reference.dim()).unwrap();
            assert!(flat.iter().zip(reference.iter()).all(|(a, b)| (a - b).abs() < 1e-12));

            let g = Array::from_shape_fn(out.dim(), |(a, b, c)| ((a * 3 + b * 7 + c) % 5) as f64 - 2.0);
            let mut gw = Array4::zeros(w.dim());
            let dx = conv_direct_backward(&xp, w.view(), p, &g, &mut gw);
            let g2 = g.view().into_shape_with_order((co, out.dim().1 * out.dim().2)).unwrap();
            let gw_ref = g2.dot(&cols.t());
            let dx_ref = col2im(wm.t().dot(&g2).view(), 3, 7, 9, k, 1, p);
            assert!(gw.iter().zip(gw_ref.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
            assert!(dx.iter().zip(dx_ref.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }
}
