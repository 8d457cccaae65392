use std::rc::Rc;
use std::sync::Arc;

use super::kernels as k;
use super::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Padding rule for [`Tape::depthwise_conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvPadding {
    /// `(k-1)/2` on each side; `k` must be odd.
    #[default]
    Centered,
    /// `k-1` on the left only.
    Causal,
}

impl ConvPadding {
    pub(crate) fn left(self, k: usize) -> Result<usize> {
        match self {
            ConvPadding::Centered if k % 2 == 0 => Err(Error::Config(format!(
                "centered depthwise conv needs an odd kernel, got {k}"
            ))),
            ConvPadding::Centered => Ok((k - 1) / 2),
            ConvPadding::Causal => Ok(k - 1),
        }
    }
}

fn tensor<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("kernel output length matches shape")
}

impl<T: Scalar> Tape<T> {
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, ka) = av.dims2("matmul")?;
        let (kb, n) = bv.dims2("matmul")?;
        if ka != kb {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let out = tensor(&[m, n], k::mm_nn(av.data(), bv.data(), m, ka, n));
        self.record(
            "matmul",
            out,
            &[a, b],
            Box::new(move |g, need| {
                let da = need[0].then(|| tensor(&[m, ka], k::mm_nt(g.data(), bv.data(), m, ka, n)));
                let db = need[1].then(|| tensor(&[ka, n], k::mm_tn(av.data(), g.data(), m, ka, n)));
                Ok(vec![da, db])
            }),
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Rc<Tensor<T>>, Rc<Tensor<T>>)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        Ok((av, bv))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("add", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        self.record(
            "add",
            tensor(av.shape(), data),
            &[a, b],
            Box::new(|g, need| Ok(vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())])),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("sub", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        self.record(
            "sub",
            tensor(av.shape(), data),
            &[a, b],
            Box::new(|g, need| {
                let neg = need[1].then(|| tensor(g.shape(), g.data().iter().map(|&v| -v).collect()));
                Ok(vec![need[0].then(|| g.clone()), neg])
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("mul", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        self.record(
            "mul",
            tensor(av.shape(), data),
            &[a, b],
            Box::new(move |g, need| {
                let prod = |o: &Tensor<T>| {
                    tensor(g.shape(), g.data().iter().zip(o.data()).map(|(&x, &y)| x * y).collect())
                };
                Ok(vec![need[0].then(|| prod(&bv)), need[1].then(|| prod(&av))])
            }),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let av = self.value(a);
        let s = T::of(s);
        let data = av.data().iter().map(|&x| x * s).collect();
        self.record(
            "scale",
            tensor(av.shape(), data),
            &[a],
            Box::new(move |g, _| Ok(vec![Some(tensor(g.shape(), g.data().iter().map(|&v| v * s).collect()))])),
        )
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn mul_scalar(&self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.numel() != 1 {
            return Err(Error::shape("mul_scalar", xv.shape(), sv.shape()));
        }
        let sc = sv.data()[0];
        let data = xv.data().iter().map(|&v| v * sc).collect();
        self.record(
            "mul_scalar",
            tensor(xv.shape(), data),
            &[x, s],
            Box::new(move |g, need| {
                let dx = need[0].then(|| tensor(g.shape(), g.data().iter().map(|&v| v * sc).collect()));
                let ds = need[1].then(|| Tensor::scalar(k::dot(g.data(), xv.data())));
                Ok(vec![dx, ds])
            }),
        )
    }

    /// Adds `b[r]` to every element of row `r` of `x` (first axis is rows).
    pub fn add_row_bias(&self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let rows = xv.shape()[0];
        if bv.numel() != rows {
            return Err(Error::shape("add_row_bias", xv.shape(), bv.shape()));
        }
        let cols = xv.numel() / rows.max(1);
        let mut data = xv.data().to_vec();
        for (r, chunk) in data.chunks_mut(cols.max(1)).enumerate() {
            let bias = bv.data()[r];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        let bshape = bv.shape().to_vec();
        self.record(
            "add_row_bias",
            tensor(xv.shape(), data),
            &[x, b],
            Box::new(move |g, need| {
                let db = need[1].then(|| {
                    tensor(&bshape, g.data().chunks(cols.max(1)).map(|c| c.iter().copied().sum()).collect())
                });
                Ok(vec![need[0].then(|| g.clone()), db])
            }),
        )
    }

    /// Scales row `r` of `x` by `w[r]`.
    pub fn mul_rows(&self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let rows = xv.shape()[0];
        if wv.numel() != rows {
            return Err(Error::shape("mul_rows", xv.shape(), wv.shape()));
        }
        let cols = xv.numel() / rows.max(1);
        let mut data = xv.data().to_vec();
        for (r, chunk) in data.chunks_mut(cols.max(1)).enumerate() {
            let s = wv.data()[r];
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        self.record(
            "mul_rows",
            tensor(xv.shape(), data),
            &[x, w],
            Box::new(move |g, need| {
                let dx = need[0].then(|| {
                    let mut d = g.data().to_vec();
                    for (r, chunk) in d.chunks_mut(cols.max(1)).enumerate() {
                        let s = wv.data()[r];
                        chunk.iter_mut().for_each(|v| *v *= s);
                    }
                    tensor(g.shape(), d)
                });
                let dw = need[1].then(|| {
                    let d = g
                        .data()
                        .chunks(cols.max(1))
                        .zip(xv.data().chunks(cols.max(1)))
                        .map(|(gc, xc)| k::dot(gc, xc))
                        .collect();
                    tensor(wv.shape(), d)
                });
                Ok(vec![dx, dw])
            }),
        )
    }

    /// `w · x + b` for `w: [out×in]`, `x: [in×len]`, `b: [out]`.
    pub fn linear(&self, w: Var, b: Option<Var>, x: Var) -> Result<Var> {
        let y = self.matmul(w, x)?;
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    /// 3×3 convolution, stride 1, zero padding 1.
    /// `x: [cin×h×w]`, `w: [cout×cin×3×3]`, `bias: [cout]`.
    pub fn conv2d_same(&self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        let (cin, h, wd) = xv.dims3("conv2d_same")?;
        let ws = wv.shape();
        if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != cin || bv.numel() != ws[0] {
            return Err(Error::shape("conv2d_same", xv.shape(), ws));
        }
        let cout = ws[0];
        let out = k::conv2d_same(xv.data(), wv.data(), bv.data(), cin, cout, h, wd);
        self.record(
            "conv2d_same",
            tensor(&[cout, h, wd], out),
            &[x, w, bias],
            Box::new(move |g, need| {
                let (dx, dw, db) =
                    k::conv2d_same_backward(g.data(), xv.data(), wv.data(), cin, cout, h, wd, need[0]);
                Ok(vec![
                    dx.map(|d| tensor(xv.shape(), d)),
                    need[1].then(|| tensor(wv.shape(), dw)),
                    need[2].then(|| tensor(bv.shape(), db)),
                ])
            }),
        )
    }

    /// Per-channel 1-D convolution of `x: [c×len]` with `w: [c×k]`, length
    /// preserved, optional per-channel bias.
    pub fn depthwise_conv1d(&self, x: Var, w: Var, bias: Option<Var>, padding: ConvPadding) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (c, len) = xv.dims2("depthwise_conv1d")?;
        let (cw, ksz) = wv.dims2("depthwise_conv1d")?;
        if cw != c {
            return Err(Error::shape("depthwise_conv1d", xv.shape(), wv.shape()));
        }
        let left = padding.left(ksz)?;
        let out = k::depthwise_conv1d(xv.data(), wv.data(), c, len, ksz, left);
        let y = self.record(
            "depthwise_conv1d",
            tensor(&[c, len], out),
            &[x, w],
            Box::new(move |g, _| {
                let (dx, dw) = k::depthwise_conv1d_backward(g.data(), xv.data(), wv.data(), c, len, ksz, left);
                Ok(vec![Some(tensor(&[c, len], dx)), Some(tensor(&[c, ksz], dw))])
            }),
        )?;
        match bias {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    fn norm(&self, op: &'static str, x: Var, gamma: Var, beta: Var, eps: f64, channel_first: bool) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let shape = xv.shape().to_vec();
        if shape.is_empty() {
            return Err(Error::shape(op, &shape, gv.shape()));
        }
        let (outer, c, inner) = if channel_first {
            (1, shape[0], xv.numel() / shape[0].max(1))
        } else {
            let c = *shape.last().unwrap();
            (xv.numel() / c.max(1), c, 1)
        };
        if gv.numel() != c || bv.numel() != c {
            return Err(Error::shape(op, &shape, gv.shape()));
        }
        let (y, stats) = k::layer_norm(xv.data(), gv.data(), bv.data(), outer, c, inner, T::of(eps));
        let (gshape, bshape) = (gv.shape().to_vec(), bv.shape().to_vec());
        self.record(
            op,
            tensor(&shape, y),
            &[x, gamma, beta],
            Box::new(move |g, _| {
                let (dx, dg, db) = k::layer_norm_backward(g.data(), gv.data(), &stats, outer, c, inner);
                Ok(vec![
                    Some(tensor(&shape, dx)),
                    Some(tensor(&gshape, dg)),
                    Some(tensor(&bshape, db)),
                ])
            }),
        )
    }

    /// Layer normalization over the trailing axis.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.norm("layer_norm", x, gamma, beta, eps, false)
    }

    /// Layer normalization over the leading (channel) axis of a `[c × ...]`
    /// feature map: each spatial position is normalized across channels.
    pub fn layer_norm_channels(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.norm("layer_norm_channels", x, gamma, beta, eps, true)
    }

    fn unary(&self, op: &'static str, x: Var, f: fn(T) -> T, df: fn(T) -> T) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        self.record(
            op,
            tensor(xv.shape(), data),
            &[x],
            Box::new(move |g, _| {
                let d = g.data().iter().zip(xv.data()).map(|(&gv, &v)| gv * df(v)).collect();
                Ok(vec![Some(tensor(g.shape(), d))])
            }),
        )
    }

    pub fn silu(&self, x: Var) -> Result<Var> {
        self.unary("silu", x, k::silu, k::silu_grad)
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, k::sigmoid, |v| {
            let s = k::sigmoid(v);
            s * (T::one() - s)
        })
    }

    pub fn softplus(&self, x: Var) -> Result<Var> {
        self.unary("softplus", x, k::softplus, k::sigmoid)
    }

    /// `out[:, i] = x[:, perm[i]]` for `x: [c×len]`. `perm` must be a bijection.
    pub fn permute_flat(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let inv = k::invert_permutation(perm)
            .ok_or_else(|| Error::Validation("permute_flat: permutation is not a bijection".into()))?;
        self.permute_checked(x, Arc::from(perm), Arc::from(inv))
    }

    /// [`Tape::permute_flat`] with a caller-validated permutation and inverse.
    pub(crate) fn permute_checked(&self, x: Var, perm: Arc<[usize]>, inv: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (c, len) = xv.dims2("permute_flat")?;
        if perm.len() != len {
            return Err(Error::shape("permute_flat", xv.shape(), &[perm.len()]));
        }
        let out = k::permute_columns(xv.data(), &perm, c);
        self.record(
            "permute_flat",
            tensor(&[c, len], out),
            &[x],
            Box::new(move |g, _| Ok(vec![Some(tensor(&[c, len], k::permute_columns(g.data(), &inv, c)))])),
        )
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.reshape(shape)?;
        let orig = xv.shape().to_vec();
        self.record(
            "reshape",
            out,
            &[x],
            Box::new(move |g, _| Ok(vec![Some(g.reshape(&orig)?)])),
        )
    }

    /// Rows `start..end` of a `[r×c]` matrix.
    pub fn slice_rows(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2("slice_rows")?;
        if start > end || end > r {
            return Err(Error::shape("slice_rows", xv.shape(), &[start, end]));
        }
        let out = xv.data()[start * c..end * c].to_vec();
        self.record(
            "slice_rows",
            tensor(&[end - start, c], out),
            &[x],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); r * c];
                d[start * c..end * c].copy_from_slice(g.data());
                Ok(vec![Some(tensor(&[r, c], d))])
            }),
        )
    }

    /// Mean over everything but the first axis: `[c × ...] -> [c]`.
    pub fn mean_rows(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.shape()[0];
        let cols = xv.numel() / rows.max(1);
        let inv = T::one() / T::of(cols as f64);
        let out = xv.data().chunks(cols.max(1)).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let shape = xv.shape().to_vec();
        self.record(
            "mean_rows",
            tensor(&[rows], out),
            &[x],
            Box::new(move |g, _| {
                let mut d = Vec::with_capacity(rows * cols);
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv * inv, cols));
                }
                Ok(vec![Some(tensor(&shape, d))])
            }),
        )
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>();
        let shape = xv.shape().to_vec();
        self.record(
            "sum",
            Tensor::scalar(s),
            &[x],
            Box::new(move |g, _| Ok(vec![Some(Tensor::full(&shape, g.data()[0]))])),
        )
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("mse", a, b)?;
        let n = T::of(av.numel() as f64);
        let diff: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
        let shape = av.shape().to_vec();
        self.record(
            "mse",
            Tensor::scalar(loss),
            &[a, b],
            Box::new(move |g, need| {
                let s = g.data()[0] * T::of(2.0) / n;
                let da: Vec<T> = diff.iter().map(|&d| d * s).collect();
                let db = need[1].then(|| tensor(&shape, da.iter().map(|&v| -v).collect()));
                Ok(vec![need[0].then(|| tensor(&shape, da)), db])
            }),
        )
    }
}
