use std::sync::Arc;

use super::config::{AggregateMode, ModelConfig};
use super::layers::{ChannelAttention, ChannelNorm, Conv3x3, DepthwiseConv1d, Linear};
use super::params::impl_params;
use crate::rng::Stream;
use crate::scan_path::{PathCache, PathKind, ScanPath};
use crate::ssm::{ScanMemory, SsmParams};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Branch and sum normalizations of the normalized-sum aggregation.
#[derive(Clone, Debug)]
pub struct Eq6Norms<T: Scalar = f32> {
    pub branch: ChannelNorm<T>,
    pub sum: ChannelNorm<T>,
}

/// Learnable multipliers on the two skip connections of a block.
#[derive(Clone, Debug)]
pub struct ResidualScales<T: Scalar = f32> {
    pub bssm: Tensor<T>,
    pub local: Tensor<T>,
}

/// One continuous-scan block:
///
/// ```text
/// F_tmp = BSSM(LN(F)) + F
/// F_out = CA(Conv(LN(F_tmp))) + F_tmp
/// ```
#[derive(Clone, Debug)]
pub struct Hcsb<T: Scalar = f32> {
    pub norm1: ChannelNorm<T>,
    pub in_proj: Linear<T>,
    /// Absent when branches are aggregated by normalized sum.
    pub gate_proj: Option<Linear<T>>,
    pub conv1d: DepthwiseConv1d<T>,
    pub ssm: SsmParams<T>,
    pub eq6: Option<Eq6Norms<T>>,
    pub out_proj: Linear<T>,
    pub norm2: ChannelNorm<T>,
    pub conv: Conv3x3<T>,
    pub ca: ChannelAttention<T>,
    pub res_scale: Option<ResidualScales<T>>,
    paths: Vec<(PathKind, usize)>,
    eps: f64,
    memory: ScanMemory,
    cache: Arc<PathCache>,
}

impl<T: Scalar> Hcsb<T> {
    pub(crate) fn init(cfg: &ModelConfig, index: usize, cache: Arc<PathCache>, rng: &mut Stream) -> Self {
        let (c, ec) = (cfg.hidden_dim, cfg.inner_dim());
        let eq6 = cfg.aggregate_mode == AggregateMode::Eq6Sum;
        Self {
            norm1: ChannelNorm::new(c),
            in_proj: Linear::init(ec, c, rng),
            gate_proj: (!eq6).then(|| Linear::init(ec, c, rng)),
            conv1d: DepthwiseConv1d::init(ec, cfg.conv1d_kernel, rng),
            ssm: SsmParams::init(ec, cfg.state_dim, rng),
            eq6: eq6.then(|| Eq6Norms {
                branch: ChannelNorm::new(ec),
                sum: ChannelNorm::new(ec),
            }),
            out_proj: Linear::init(c, ec, rng),
            norm2: ChannelNorm::new(c),
            conv: Conv3x3::init(c, c, rng),
            ca: ChannelAttention::init(c, cfg.ca_reduction, rng),
            res_scale: cfg.scale_residual.then(|| ResidualScales {
                bssm: Tensor::ones(&[1]).with_grad(),
                local: Tensor::ones(&[1]).with_grad(),
            }),
            paths: cfg.block_paths(index),
            eps: cfg.ln_eps,
            memory: ScanMemory::Store,
            cache,
        }
    }

    /// `(kind, direction)` of every scanned branch.
    pub fn paths(&self) -> &[(PathKind, usize)] {
        &self.paths
    }

    pub fn set_scan_memory(&mut self, memory: ScanMemory) {
        self.memory = memory;
    }

    /// This block's traversals of an `h×w` grid.
    pub fn grid_paths(&self, h: usize, w: usize) -> Result<Vec<Arc<ScanPath>>> {
        self.paths.iter().map(|&(k, d)| self.cache.get(k, d, h, w)).collect()
    }

    /// Scanned branches `[EC × L]` of `f: [C × L]`, one per path, each
    /// returned in grid order.
    pub fn scan_branches(&self, tape: &Tape<T>, f: Var, paths: &[Arc<ScanPath>]) -> Result<Vec<Var>> {
        if paths.is_empty() {
            return Err(Error::Config("at least one scan path is required".into()));
        }
        let n = self.ssm.state_dim();
        let u = tape.silu(self.conv1d.forward(tape, self.in_proj.forward(tape, f)?)?)?;
        let delta = tape.softplus(tape.linear(
            tape.param(&self.ssm.w_delta),
            Some(tape.param(&self.ssm.b_delta)),
            u,
        )?)?;
        let bc = tape.matmul(tape.param(&self.ssm.w_bc), u)?;
        let b = tape.slice_rows(bc, 0, n)?;
        let c = tape.slice_rows(bc, n, 2 * n)?;
        let (a_log, d_skip) = (tape.param(&self.ssm.a_log), tape.param(&self.ssm.d_skip));

        paths
            .iter()
            .map(|p| {
                let fwd = |v| tape.permute_checked(v, p.perm_arc(), p.inv_perm_arc());
                let y = tape.selective_scan(fwd(u)?, fwd(delta)?, fwd(b)?, fwd(c)?, a_log, d_skip, self.memory)?;
                tape.permute_checked(y, p.inv_perm_arc(), p.perm_arc())
            })
            .collect()
    }

    /// `LN_sum(Σ_j LN_branch(y_j))`.
    pub fn aggregate_eq6(&self, tape: &Tape<T>, branches: &[Var]) -> Result<Var> {
        let norms = self
            .eq6
            .as_ref()
            .ok_or_else(|| Error::Config("normalized-sum aggregation needs aggregate_mode = eq6-sum".into()))?;
        let (first, rest) = branches
            .split_first()
            .ok_or_else(|| Error::Config("at least one scan path is required".into()))?;
        let mut acc = norms.branch.forward(tape, *first, self.eps)?;
        for &y in rest {
            acc = tape.add(acc, norms.branch.forward(tape, y, self.eps)?)?;
        }
        norms.sum.forward(tape, acc, self.eps)
    }

    /// `g ⊙ Σ_j y_j` with `g = silu(gate(f))`.
    pub fn aggregate_gated(&self, tape: &Tape<T>, f: Var, branches: &[Var]) -> Result<Var> {
        let gate = self
            .gate_proj
            .as_ref()
            .ok_or_else(|| Error::Config("gated aggregation needs aggregate_mode = per-block-pair".into()))?;
        let (first, rest) = branches
            .split_first()
            .ok_or_else(|| Error::Config("at least one scan path is required".into()))?;
        let mut acc = *first;
        for &y in rest {
            acc = tape.add(acc, y)?;
        }
        let g = tape.silu(gate.forward(tape, f)?)?;
        tape.mul(g, acc)
    }

    /// BSSM of `f: [C × L]` along explicit `paths`.
    pub fn bssm_along(&self, tape: &Tape<T>, f: Var, paths: &[Arc<ScanPath>]) -> Result<Var> {
        let branches = self.scan_branches(tape, f, paths)?;
        let mixed = match self.eq6 {
            Some(_) => self.aggregate_eq6(tape, &branches)?,
            None => self.aggregate_gated(tape, f, &branches)?,
        };
        self.out_proj.forward(tape, mixed)
    }

    /// BSSM of `f: [C × H·W]` along this block's own paths.
    pub fn bssm_forward(&self, tape: &Tape<T>, f: Var, h: usize, w: usize) -> Result<Var> {
        self.bssm_along(tape, f, &self.grid_paths(h, w)?)
    }

    fn skip(&self, tape: &Tape<T>, x: Var, scale: Option<&Tensor<T>>) -> Result<Var> {
        match scale {
            Some(s) => tape.mul_scalar(x, tape.param(s)),
            None => Ok(x),
        }
    }

    /// The block on `f: [C × H × W]` along explicit `paths`.
    pub fn forward_along(&self, tape: &Tape<T>, f: Var, paths: &[Arc<ScanPath>]) -> Result<Var> {
        let shape = tape.shape(f);
        let [c, h, w] = shape[..] else {
            return Err(Error::shape("hcsb_forward", &shape, &[0, 0, 0]));
        };
        let flat = tape.reshape(f, &[c, h * w])?;
        let normed = self.norm1.forward(tape, flat, self.eps)?;
        let scanned = self.bssm_along(tape, normed, paths)?;
        let skip = self.skip(tape, flat, self.res_scale.as_ref().map(|s| &s.bssm))?;
        let tmp = tape.reshape(tape.add(scanned, skip)?, &[c, h, w])?;
        let local = self.norm2.forward(tape, tmp, self.eps)?;
        let local = self.ca.forward(tape, self.conv.forward(tape, local)?)?;
        let skip = self.skip(tape, tmp, self.res_scale.as_ref().map(|s| &s.local))?;
        tape.add(local, skip)
    }

    pub fn forward(&self, tape: &Tape<T>, f: Var) -> Result<Var> {
        let shape = tape.shape(f);
        if shape.len() != 3 {
            return Err(Error::shape("hcsb_forward", &shape, &[0, 0, 0]));
        }
        self.forward_along(tape, f, &self.grid_paths(shape[1], shape[2])?)
    }
}

impl_params!(Eq6Norms<T> { branch, sum });
impl_params!(ResidualScales<T> { bssm, local });
impl_params!(Hcsb<T> {
    norm1, in_proj, gate_proj, conv1d, ssm, eq6, out_proj, norm2, conv, ca, res_scale
});
