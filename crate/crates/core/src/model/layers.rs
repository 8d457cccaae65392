//! Parameterized building blocks.

use super::params::impl_params;
use crate::rng::Stream;
use crate::tensor::{ConvPadding, Scalar, Tape, Tensor, Var};
use crate::Result;

pub(crate) fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut Stream) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.uniform_in(-bound, bound))).with_grad()
}

/// `y = W·x + b` applied to every column of `x: [in × len]`.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar = f32> {
    /// `[out × in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init(out: usize, inp: usize, rng: &mut Stream) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Self {
            weight: uniform(&[out, inp], bound, rng),
            bias: uniform(&[out], bound, rng),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        tape.linear(tape.param(&self.weight), Some(tape.param(&self.bias)), x)
    }
}

/// Layer normalization across the channel axis of a `[c × ...]` map.
#[derive(Clone, Debug)]
pub struct ChannelNorm<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> ChannelNorm<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[c]).with_grad(),
            beta: Tensor::zeros(&[c]).with_grad(),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm_channels(x, tape.param(&self.gamma), tape.param(&self.beta), eps)
    }
}

/// 3×3 same-padded convolution.
#[derive(Clone, Debug)]
pub struct Conv3x3<T: Scalar = f32> {
    /// `[out × in × 3 × 3]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv3x3<T> {
    pub fn init(out: usize, inp: usize, rng: &mut Stream) -> Self {
        let bound = 1.0 / ((inp * 9) as f64).sqrt();
        Self {
            weight: uniform(&[out, inp, 3, 3], bound, rng),
            bias: uniform(&[out], bound, rng),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d_same(x, tape.param(&self.weight), tape.param(&self.bias))
    }
}

/// Centered depthwise convolution along the sequence axis.
#[derive(Clone, Debug)]
pub struct DepthwiseConv1d<T: Scalar = f32> {
    /// `[c × k]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DepthwiseConv1d<T> {
    pub fn init(c: usize, k: usize, rng: &mut Stream) -> Self {
        let bound = 1.0 / (k as f64).sqrt();
        Self {
            weight: uniform(&[c, k], bound, rng),
            bias: uniform(&[c], bound, rng),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        tape.depthwise_conv1d(
            x,
            tape.param(&self.weight),
            Some(tape.param(&self.bias)),
            ConvPadding::Centered,
        )
    }
}

/// Squeeze-and-excite channel attention:
/// `x · sigmoid(W₂ · silu(W₁ · mean(x)))`, per channel.
#[derive(Clone, Debug)]
pub struct ChannelAttention<T: Scalar = f32> {
    /// `C → C/r`
    pub reduce: Linear<T>,
    /// `C/r → C`
    pub expand: Linear<T>,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn init(c: usize, reduction: usize, rng: &mut Stream) -> Self {
        Self {
            reduce: Linear::init(c / reduction, c, rng),
            expand: Linear::init(c, c / reduction, rng),
        }
    }

    /// Per-channel weights for `x: [C × ...]`, shape `[C]`.
    pub fn weights(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        let c = tape.shape(x)[0];
        let s = tape.mean_rows(x)?;
        let s = tape.reshape(s, &[c, 1])?;
        let h = tape.silu(self.reduce.forward(tape, s)?)?;
        let w = tape.sigmoid(self.expand.forward(tape, h)?)?;
        tape.reshape(w, &[c])
    }

    pub fn forward(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        let w = self.weights(tape, x)?;
        tape.mul_rows(x, w)
    }
}

impl_params!(Linear<T> { weight, bias });
impl_params!(ChannelNorm<T> { gamma, beta });
impl_params!(Conv3x3<T> { weight, bias });
impl_params!(DepthwiseConv1d<T> { weight, bias });
impl_params!(ChannelAttention<T> { reduce, expand });

#[cfg(test)]
mod tests {
    use super::*;

    fn ca(c: usize) -> ChannelAttention<f64> {
        ChannelAttention::init(c, 2, &mut Stream::new(1, 2))
    }

    #[test]
    fn saturated_gate_passes_input() {
        let mut m = ca(4);
        m.expand.weight.data_mut().fill(0.0);
        m.expand.bias.data_mut().fill(40.0);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[4, 3, 3], |i| i as f64 * 0.1 - 1.0));
        let y = m.forward(&tape, x).unwrap();
        assert!(tape.value(y).max_abs_diff(&tape.value(x)) < 1e-12);

        m.expand.bias.data_mut().fill(-40.0);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[4, 3, 3], |i| i as f64 * 0.1 - 1.0));
        let y = m.forward(&tape, x).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn squeeze_is_the_channel_mean() {
        // With identity-like weights, the gate input is a known function of the mean.
        let mut m = ca(2);
        m.reduce.weight = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        m.reduce.bias.data_mut().fill(0.0);
        m.expand.weight = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        m.expand.bias.data_mut().fill(0.0);
        let x = Tensor::from_fn(&[2, 2, 3], |i| ((i * 7) % 5) as f64);
        let mean0: f64 = x.data()[..6].iter().sum::<f64>() / 6.0;
        let tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let w = tape.value(m.weights(&tape, xv).unwrap());
        let silu = mean0 / (1.0 + (-mean0).exp());
        let want = 1.0 / (1.0 + (-silu).exp());
        assert!((w.data()[0] - want).abs() < 1e-12);
    }
}
