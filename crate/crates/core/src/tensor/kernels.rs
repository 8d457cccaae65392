//! Plain forward/backward kernels on contiguous buffers. These carry no tape
//! bookkeeping; [`super::Tape`] wraps them with gradient rules.

use rayon::prelude::*;

use super::Scalar;

/// Work size (multiply-adds) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let row = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n.max(1)).enumerate().for_each(row);
    } else {
        out.chunks_mut(n.max(1)).enumerate().for_each(row);
    }
    out
}

/// `out[m×k] = g[m×n] · b[k×n]ᵀ`
pub fn mm_nt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    let row = |(i, out_row): (usize, &mut [T])| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *o = dot(g_row, b_row);
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(k.max(1)).enumerate().for_each(row);
    } else {
        out.chunks_mut(k.max(1)).enumerate().for_each(row);
    }
    out
}

/// `out[k×n] = a[m×k]ᵀ · g[m×n]`
pub fn mm_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    let row = |(p, out_row): (usize, &mut [T])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let g_row = &g[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && k > 1 {
        out.par_chunks_mut(n.max(1)).enumerate().for_each(row);
    } else {
        out.chunks_mut(n.max(1)).enumerate().for_each(row);
    }
    out
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Range of output positions `o` for which `o + shift` lies in `[0, len)`.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// 3×3 convolution with one pixel of zero padding.
/// `x: [cin×h×w]`, `w: [cout×cin×3×3]`, `bias: [cout]`.
pub fn conv2d_same<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
) -> Vec<T> {
    let plane = h * wd;
    let mut out = vec![T::zero(); cout * plane];
    let per_out = |(co, o): (usize, &mut [T])| {
        o.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let xp = &x[ci * plane..(ci + 1) * plane];
            let wk = &w[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let wv = wk[ky * 3 + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(wd, dx);
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize * wd;
                        let orow = &mut o[y * wd + x0..y * wd + x1];
                        let srow = &xp[(src_row as isize + x0 as isize + dx) as usize
                            ..(src_row as isize + x1 as isize + dx) as usize];
                        for (ov, &sv) in orow.iter_mut().zip(srow) {
                            *ov += wv * sv;
                        }
                    }
                }
            }
        }
    };
    if cout * cin * plane * 9 >= PAR_THRESHOLD {
        out.par_chunks_mut(plane).enumerate().for_each(per_out);
    } else {
        out.chunks_mut(plane).enumerate().for_each(per_out);
    }
    out
}

/// Gradients of [`conv2d_same`]: `(dx, dw, dbias)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_same_backward<T: Scalar>(
    g: &[T],
    x: &[T],
    w: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let plane = h * wd;
    let dbias: Vec<T> = g.chunks(plane).map(|c| c.iter().copied().sum()).collect();

    let mut dw = vec![T::zero(); cout * cin * 9];
    let per_w = |(co, dwc): (usize, &mut [T])| {
        let gp = &g[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let xp = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(wd, dx);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize * wd) as isize + dx;
                        let grow = &gp[y * wd + x0..y * wd + x1];
                        let srow = &xp[(src + x0 as isize) as usize..(src + x1 as isize) as usize];
                        acc += dot(grow, srow);
                    }
                    dwc[ci * 9 + ky * 3 + kx] = acc;
                }
            }
        }
    };
    if cout * cin * plane * 9 >= PAR_THRESHOLD {
        dw.par_chunks_mut(cin * 9).enumerate().for_each(per_w);
    } else {
        dw.chunks_mut(cin * 9).enumerate().for_each(per_w);
    }

    let dx = need_x.then(|| {
        let mut dx = vec![T::zero(); cin * plane];
        let per_in = |(ci, dxp): (usize, &mut [T])| {
            for co in 0..cout {
                let gp = &g[co * plane..(co + 1) * plane];
                let wk = &w[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..3 {
                        let wv = wk[ky * 3 + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let dx = kx as isize - 1;
                        let (x0, x1) = valid_range(wd, dx);
                        // out[y, x] read in[y+dy, x+dx]; scatter back.
                        for y in y0..y1 {
                            let dst = ((y as isize + dy) as usize * wd) as isize + dx;
                            let grow = &gp[y * wd + x0..y * wd + x1];
                            let drow = &mut dxp
                                [(dst + x0 as isize) as usize..(dst + x1 as isize) as usize];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        };
        if cout * cin * plane * 9 >= PAR_THRESHOLD {
            dx.par_chunks_mut(plane).enumerate().for_each(per_in);
        } else {
            dx.chunks_mut(plane).enumerate().for_each(per_in);
        }
        dx
    });
    (dx, dw, dbias)
}

/// Per-channel 1-D convolution, `x: [c×len]`, `w: [c×k]`. Output position
/// `t` reads inputs `t - left + j` for `j in 0..k`.
pub fn depthwise_conv1d<T: Scalar>(x: &[T], w: &[T], c: usize, len: usize, k: usize, left: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * len];
    for ch in 0..c {
        let xr = &x[ch * len..(ch + 1) * len];
        let or = &mut out[ch * len..(ch + 1) * len];
        for j in 0..k {
            let wv = w[ch * k + j];
            let shift = j as isize - left as isize;
            let (t0, t1) = valid_range(len, shift);
            let src = &xr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
            for (o, &s) in or[t0..t1].iter_mut().zip(src) {
                *o += wv * s;
            }
        }
    }
    out
}

/// Gradients of [`depthwise_conv1d`]: `(dx, dw)`.
pub fn depthwise_conv1d_backward<T: Scalar>(
    g: &[T],
    x: &[T],
    w: &[T],
    c: usize,
    len: usize,
    k: usize,
    left: usize,
) -> (Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); c * len];
    let mut dw = vec![T::zero(); c * k];
    for ch in 0..c {
        let xr = &x[ch * len..(ch + 1) * len];
        let gr = &g[ch * len..(ch + 1) * len];
        let dxr = &mut dx[ch * len..(ch + 1) * len];
        for j in 0..k {
            let wv = w[ch * k + j];
            let shift = j as isize - left as isize;
            let (t0, t1) = valid_range(len, shift);
            let s0 = (t0 as isize + shift) as usize;
            let s1 = (t1 as isize + shift) as usize;
            dw[ch * k + j] = dot(&gr[t0..t1], &xr[s0..s1]);
            for (d, &gv) in dxr[s0..s1].iter_mut().zip(&gr[t0..t1]) {
                *d += wv * gv;
            }
        }
    }
    (dx, dw)
}

/// Saved statistics of a layer normalization.
pub struct NormStats<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalizes over an axis of extent `c` laid out as `[outer × c × inner]`.
/// Trailing-axis normalization is `inner = 1`; channel-first `[c × len]`
/// maps use `outer = 1, inner = len`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    outer: usize,
    c: usize,
    inner: usize,
    eps: T,
) -> (Vec<T>, NormStats<T>) {
    let n = x.len();
    let mut y = vec![T::zero(); n];
    let mut xhat = vec![T::zero(); n];
    let mut rstd = vec![T::zero(); outer * inner];
    let cf = T::of(c as f64);
    for o in 0..outer {
        let base = o * c * inner;
        if inner == 1 {
            let xs = &x[base..base + c];
            let mean = xs.iter().copied().sum::<T>() / cf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let r = T::one() / (var + eps).sqrt();
            rstd[o] = r;
            for j in 0..c {
                let xh = (xs[j] - mean) * r;
                xhat[base + j] = xh;
                y[base + j] = xh * gamma[j] + beta[j];
            }
        } else {
            // Column statistics accumulated row by row so the inner loop runs
            // over contiguous memory.
            let mut mean = vec![T::zero(); inner];
            for j in 0..c {
                let row = &x[base + j * inner..base + (j + 1) * inner];
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= cf);
            let mut var = vec![T::zero(); inner];
            for j in 0..c {
                let row = &x[base + j * inner..base + (j + 1) * inner];
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let r = &mut rstd[o * inner..(o + 1) * inner];
            for (ri, &s) in r.iter_mut().zip(&var) {
                *ri = T::one() / (s / cf + eps).sqrt();
            }
            for j in 0..c {
                let off = base + j * inner;
                for i in 0..inner {
                    let xh = (x[off + i] - mean[i]) * r[i];
                    xhat[off + i] = xh;
                    y[off + i] = xh * gamma[j] + beta[j];
                }
            }
        }
    }
    (y, NormStats { xhat, rstd })
}

/// Gradients of [`layer_norm`]: `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    g: &[T],
    gamma: &[T],
    stats: &NormStats<T>,
    outer: usize,
    c: usize,
    inner: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let cf = T::of(c as f64);
    let xhat = &stats.xhat;
    for o in 0..outer {
        let base = o * c * inner;
        // Per normalized vector: mean(gxh) and mean(gxh·xhat).
        let mut m1 = vec![T::zero(); inner];
        let mut m2 = vec![T::zero(); inner];
        for j in 0..c {
            let off = base + j * inner;
            let mut dg = T::zero();
            let mut db = T::zero();
            for i in 0..inner {
                let gv = g[off + i];
                let xh = xhat[off + i];
                dg += gv * xh;
                db += gv;
                let gxh = gv * gamma[j];
                m1[i] += gxh;
                m2[i] += gxh * xh;
            }
            dgamma[j] += dg;
            dbeta[j] += db;
        }
        for j in 0..c {
            let off = base + j * inner;
            for i in 0..inner {
                let gxh = g[off + i] * gamma[j];
                let r = stats.rstd[o * inner + i];
                dx[off + i] = r * (gxh - m1[i] / cf - xhat[off + i] * m2[i] / cf);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] on `(0, ∞)`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// `out[:, i] = x[:, perm[i]]` for `x: [c×len]`.
pub fn permute_columns<T: Scalar>(x: &[T], perm: &[usize], c: usize) -> Vec<T> {
    let len = perm.len();
    let mut out = vec![T::zero(); c * len];
    for ch in 0..c {
        let src = &x[ch * len..(ch + 1) * len];
        for (o, &p) in out[ch * len..(ch + 1) * len].iter_mut().zip(perm) {
            *o = src[p];
        }
    }
    out
}

/// Inverse of a bijection on `[0, perm.len())`, or `None` if `perm` is not one.
pub fn invert_permutation(perm: &[usize]) -> Option<Vec<usize>> {
    let mut inv = vec![usize::MAX; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        if p >= perm.len() || inv[p] != usize::MAX {
            return None;
        }
        inv[p] = i;
    }
    Some(inv)
}
