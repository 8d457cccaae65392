//! The denoising network.
//!
//! ```text
//! F_s  = Conv3x3(Y_in)                      bands → C
//! F'   = layers(F_s), each layer = blocks + skip from its input
//! Y_out = Y_in + Conv3x3(F')                C → bands
//! ```

mod block;
mod checkpoint;
mod config;
mod layers;
pub(crate) mod params;

use std::sync::Arc;

pub use block::{Eq6Norms, Hcsb, ResidualScales};
pub use checkpoint::CHECKPOINT_VERSION;
pub use config::{AggregateMode, ModelConfig, ScanMode};
pub use layers::{ChannelAttention, ChannelNorm, Conv3x3, DepthwiseConv1d, Linear};
pub use params::Params;

use crate::rng::Stream;
use crate::scan_path::PathCache;
use crate::ssm::ScanMemory;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

const INIT_STREAM: u64 = 0x6d6f_6465_6c;
const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct HsdmModel<T: Scalar = f32> {
    config: ModelConfig,
    pub shallow: Conv3x3<T>,
    pub layers: Vec<Vec<Hcsb<T>>>,
    pub head: Conv3x3<T>,
}

impl<T: Scalar> HsdmModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Stream::new(seed, INIT_STREAM);
        let cache = Arc::new(PathCache::default());
        let (b, c) = (config.bands, config.hidden_dim);
        let shallow = Conv3x3::init(c, b, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| {
                (0..config.blocks_per_layer)
                    .map(|k| Hcsb::init(&config, k, Arc::clone(&cache), &mut rng))
                    .collect()
            })
            .collect();
        let mut head = Conv3x3::init(b, c, &mut rng);
        for v in head.weight.data_mut().iter_mut().chain(head.bias.data_mut()) {
            *v = *v * T::of(HEAD_INIT_SCALE);
        }
        Ok(Self {
            config,
            shallow,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Hcsb<T>> {
        self.layers.iter().flatten()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    pub fn set_scan_memory(&mut self, memory: ScanMemory) {
        self.layers.iter_mut().flatten().for_each(|b| b.set_scan_memory(memory));
    }

    /// Zeroes the output convolution, making the network the identity.
    pub fn zero_head(&mut self) {
        self.head.weight.data_mut().fill(T::zero());
        self.head.bias.data_mut().fill(T::zero());
    }

    /// The same network in another precision.
    pub fn cast<U: Scalar>(&self) -> HsdmModel<U> {
        let mut out = HsdmModel::<U>::new(self.config.clone(), 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [b, h, w] if b == self.config.bands && h > 0 && w > 0 => Ok(()),
            _ => Err(Error::shape("hsdm_forward", shape, &[self.config.bands, 0, 0])),
        }
    }

    /// Deep features `F'` of `x: [bands × H × W]`, shape `[C × H × W]`.
    pub fn features(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        self.check_input(&tape.shape(x))?;
        let mut f = self.shallow.forward(tape, x)?;
        for layer in &self.layers {
            let input = f;
            for block in layer {
                f = block.forward(tape, f)?;
            }
            f = tape.add(f, input)?;
        }
        Ok(f)
    }

    /// Records the full network on `tape`.
    pub fn forward_tape(&self, tape: &Tape<T>, x: Var) -> Result<Var> {
        let f = self.features(tape, x)?;
        tape.add(x, self.head.forward(tape, f)?)
    }

    /// Inference on one `[bands × H × W]` input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let y = self.forward_tape(&tape, xv)?;
        Ok((*tape.value(y)).clone())
    }

    /// Parameter gradients accumulated on `tape`, in [`HsdmModel::params`]
    /// order; parameters that received none get zeros.
    pub fn grads(&self, tape: &Tape<T>) -> Vec<Tensor<T>> {
        self.params()
            .into_iter()
            .map(|(_, p)| tape.param_grad(p).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}

impl<T: Scalar> Params<T> for HsdmModel<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.shallow.collect(&params::join(prefix, "shallow"), out);
        self.layers.collect(&params::join(prefix, "layers"), out);
        self.head.collect(&params::join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.shallow.collect_mut(&params::join(prefix, "shallow"), out);
        self.layers.collect_mut(&params::join(prefix, "layers"), out);
        self.head.collect_mut(&params::join(prefix, "head"), out);
    }
}
