//! Finite-difference gradient checks in `f64`.
//!
//! Every check reduces the op output to a scalar with a fixed random
//! projection, then compares the tape gradient with central differences.
//! The error is norm-wise: `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖, 1e-12)`
//! over all inputs jointly.

use crate::model::{AggregateMode, HsdmModel, ModelConfig, ScanMode};
use crate::rng::Stream;
use crate::ssm::ScanMemory;
use crate::tensor::{ConvPadding, Tape, Tensor, Var};
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub rel_error: f64,
    pub tolerance: f64,
    /// Number of scalar inputs perturbed.
    pub inputs: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<28} rel_err={:.3e} tol={:.0e} inputs={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.rel_error,
            self.tolerance,
            self.inputs
        )
    }
}

/// Norm-wise relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

type OpFn = dyn Fn(&Tape<f64>, &[Var]) -> Result<Var>;

fn projected_loss(tape: &Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out);
    let mut rng = Stream::new(seed, 0xfd);
    let r = Tensor::from_fn(&shape, |_| rng.uniform_in(-1.0, 1.0));
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn eval(f: &OpFn, inputs: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let loss = projected_loss(&tape, out, seed)?;
    Ok(tape.value(loss).data()[0])
}

/// Checks `f` against central differences at `inputs`.
pub fn check_op(name: &str, inputs: Vec<Tensor<f64>>, f: &OpFn, tolerance: f64) -> Result<CheckResult> {
    let seed = name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    let loss = projected_loss(&tape, out, seed)?;
    tape.backward(loss)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(&inputs) {
        match tape.grad(*v) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = inputs.clone();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(f, &probe, seed)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(f, &probe, seed)?;
            probe[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        rel_error: relative_error(&analytic, &numeric),
        tolerance,
        inputs: numeric.len(),
    })
}

fn rand(shape: &[usize], lo: f64, hi: f64, rng: &mut Stream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_in(lo, hi))
}

/// Checks of every differentiable tape op.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = Stream::new(seed, 0x0b5);
    let mut r = |shape: &[usize]| rand(shape, -1.0, 1.0, &mut rng);
    let mut cases: Vec<(&str, Vec<Tensor<f64>>, Box<OpFn>)> = vec![
        ("matmul", vec![r(&[3, 4]), r(&[4, 5])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![r(&[3, 4]), r(&[3, 4])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![r(&[3, 4]), r(&[3, 4])], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![r(&[3, 4]), r(&[3, 4])], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", vec![r(&[3, 4])], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("mul_scalar", vec![r(&[3, 4]), r(&[1])], Box::new(|t, v| t.mul_scalar(v[0], v[1]))),
        ("add_row_bias", vec![r(&[3, 4]), r(&[3])], Box::new(|t, v| t.add_row_bias(v[0], v[1]))),
        ("mul_rows", vec![r(&[3, 2, 2]), r(&[3])], Box::new(|t, v| t.mul_rows(v[0], v[1]))),
        (
            "linear",
            vec![r(&[5, 3]), r(&[5]), r(&[3, 6])],
            Box::new(|t, v| t.linear(v[0], Some(v[1]), v[2])),
        ),
        (
            "conv2d_same",
            vec![r(&[2, 4, 5]), r(&[3, 2, 3, 3]), r(&[3])],
            Box::new(|t, v| t.conv2d_same(v[0], v[1], v[2])),
        ),
        (
            "depthwise_conv1d",
            vec![r(&[3, 7]), r(&[3, 3]), r(&[3])],
            Box::new(|t, v| t.depthwise_conv1d(v[0], v[1], Some(v[2]), ConvPadding::Centered)),
        ),
        (
            "depthwise_conv1d_causal",
            vec![r(&[3, 7]), r(&[3, 4])],
            Box::new(|t, v| t.depthwise_conv1d(v[0], v[1], None, ConvPadding::Causal)),
        ),
        (
            "layer_norm",
            vec![r(&[4, 5]), r(&[5]), r(&[5])],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        ),
        (
            "layer_norm_channels",
            vec![r(&[4, 2, 3]), r(&[4]), r(&[4])],
            Box::new(|t, v| t.layer_norm_channels(v[0], v[1], v[2], 1e-5)),
        ),
        ("silu", vec![r(&[3, 4])], Box::new(|t, v| t.silu(v[0]))),
        ("sigmoid", vec![r(&[3, 4])], Box::new(|t, v| t.sigmoid(v[0]))),
        ("softplus", vec![r(&[3, 4])], Box::new(|t, v| t.softplus(v[0]))),
        (
            "permute_flat",
            vec![r(&[2, 5])],
            Box::new(|t, v| t.permute_flat(v[0], &[3, 0, 4, 1, 2])),
        ),
        ("reshape", vec![r(&[2, 6])], Box::new(|t, v| t.reshape(v[0], &[3, 4]))),
        ("slice_rows", vec![r(&[5, 3])], Box::new(|t, v| t.slice_rows(v[0], 1, 4))),
        ("mean_rows", vec![r(&[3, 2, 2])], Box::new(|t, v| t.mean_rows(v[0]))),
        ("sum", vec![r(&[3, 4])], Box::new(|t, v| t.sum(v[0]))),
        ("mse", vec![r(&[3, 4]), r(&[3, 4])], Box::new(|t, v| t.mse(v[0], v[1]))),
    ];
    let mut srng = Stream::new(seed, 0x5ca);
    let (d, n, len) = (3, 4, 9);
    // Step sizes and decay rates chosen so Δ·A spans the series and
    // closed-form regimes of the discretization.
    for (name, memory, dlo, dhi) in [
        ("selective_scan", ScanMemory::Store, 0.05, 1.5),
        ("selective_scan_small_step", ScanMemory::Store, 1e-3, 0.05),
        ("selective_scan_recompute", ScanMemory::Recompute { checkpoint_every: 4 }, 0.05, 1.5),
    ] {
        let inputs = vec![
            r(&[d, len]),
            rand(&[d, len], dlo, dhi, &mut srng),
            r(&[n, len]),
            r(&[n, len]),
            rand(&[d, n], -1.0, 1.0, &mut srng),
            r(&[d]),
        ];
        cases.push((
            name,
            inputs,
            Box::new(move |t, v| t.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], memory)),
        ));
    }
    cases
        .iter()
        .map(|(name, inputs, f)| check_op(name, inputs.clone(), f.as_ref(), OP_TOLERANCE))
        .collect()
}

/// Tiny model used by the end-to-end checks: C = 8, N = 4, one layer of
/// two blocks, 4 bands.
pub fn tiny_config(scan_mode: ScanMode, aggregate_mode: AggregateMode) -> ModelConfig {
    ModelConfig {
        bands: 4,
        num_layers: 1,
        blocks_per_layer: 2,
        hidden_dim: 8,
        state_dim: 4,
        scan_mode,
        aggregate_mode,
        ..ModelConfig::default()
    }
}

fn model_loss(model: &HsdmModel<f64>, x: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    let tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let y = model.forward_tape(&tape, xv)?;
    let t = tape.constant(target.clone());
    let l = tape.mse(y, t)?;
    Ok(tape.value(l).data()[0])
}

/// End-to-end check of the loss gradient with respect to every parameter
/// and the input cube (`4×8×8`).
pub fn model_check(config: ModelConfig, seed: u64) -> Result<CheckResult> {
    let mut name = format!("model/{}/{}", config.scan_mode, config.aggregate_mode);
    if config.scale_residual {
        name.push_str("/scaled");
    }
    let mut model = HsdmModel::<f64>::new(config, seed)?;
    let mut rng = Stream::new(seed, 0xe2e);
    let shape = [model.config().bands, 8, 8];
    let x = rand(&shape, 0.0, 1.0, &mut rng);
    let target = rand(&shape, 0.0, 1.0, &mut rng);
    // Perturb the small head so the output depends visibly on every block.
    for (_, p) in model.params_mut() {
        for v in p.data_mut() {
            *v += 0.05 * rng.uniform_in(-1.0, 1.0);
        }
    }

    let tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = model.forward_tape(&tape, xv)?;
    let t = tape.constant(target.clone());
    let loss = tape.mse(y, t)?;
    tape.backward(loss)?;
    let mut analytic: Vec<f64> = model.grads(&tape).iter().flat_map(|g| g.data().to_vec()).collect();
    analytic.extend_from_slice(tape.grad(xv).ok_or_else(|| Error::Validation("no input gradient".into()))?.data());

    let mut numeric = Vec::with_capacity(analytic.len());
    let count = model.params().len();
    for i in 0..count {
        let n = model.params()[i].1.numel();
        for j in 0..n {
            let orig = model.params()[i].1.data()[j];
            let set = |m: &mut HsdmModel<f64>, v: f64| m.params_mut()[i].1.data_mut()[j] = v;
            set(&mut model, orig + FD_STEP);
            let up = model_loss(&model, &x, &target)?;
            set(&mut model, orig - FD_STEP);
            let down = model_loss(&model, &x, &target)?;
            set(&mut model, orig);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    let mut probe = x.clone();
    for j in 0..x.numel() {
        let orig = x.data()[j];
        probe.data_mut()[j] = orig + FD_STEP;
        let up = model_loss(&model, &probe, &target)?;
        probe.data_mut()[j] = orig - FD_STEP;
        let down = model_loss(&model, &probe, &target)?;
        probe.data_mut()[j] = orig;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(CheckResult {
        name,
        rel_error: relative_error(&analytic, &numeric),
        tolerance: MODEL_TOLERANCE,
        inputs: numeric.len(),
    })
}

/// End-to-end checks for every scan mode plus the alternative aggregation.
pub fn model_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut configs: Vec<ModelConfig> = ScanMode::ALL
        .into_iter()
        .map(|m| tiny_config(m, AggregateMode::PerBlockPair))
        .collect();
    configs.push(tiny_config(ScanMode::BidCross, AggregateMode::Eq6Sum));
    let mut scaled = tiny_config(ScanMode::BidCross, AggregateMode::PerBlockPair);
    scaled.scale_residual = true;
    configs.push(scaled);
    configs.into_iter().map(|c| model_check(c, seed)).collect()
}
