//! MSE training with Adam, a staged learning-rate schedule, seeded patch
//! sampling with dihedral augmentation and a random-noise curriculum.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::io::KeyValues;
use crate::metrics::psnr;
use crate::model::HsdmModel;
use crate::noise::{corrupt, generate_synthetic_clean, HsiCube, NoiseCase, NoiseSpec};
use crate::rng::Stream;
use crate::tensor::{Scalar, Tape, Tensor};
use crate::{Error, Result};

/// Noise cases drawn for training samples.
pub const CURRICULUM: [NoiseCase; 4] = [
    NoiseCase::NoniidGauss,
    NoiseCase::GaussStripe,
    NoiseCase::GaussDeadline,
    NoiseCase::GaussImpulse,
];

pub const LOG_HEADER: &str = "epoch,step,loss,lr,val_psnr";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "model.hsdm";

const SAMPLE_STREAM_BASE: u64 = 1 << 32;
const DATA_STREAM: u64 = 0x6461_7461;
const VAL_NOISE_STREAM: u64 = 0x7661_6c;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub augment: bool,
    /// Reduce batch gradients in a fixed order.
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 3e-4,
            lr_decay_factor: 5.0,
            lr_decay_every: 20,
            epochs: 100,
            steps_per_epoch: 100,
            batch_size: 8,
            patch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            augment: true,
            deterministic: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 400 steps on 32×32 patches.
    pub fn desk() -> Self {
        Self {
            lr_init: 1e-3,
            epochs: 4,
            steps_per_epoch: 100,
            patch_size: 32,
            ..Self::default()
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// `lr_init / factor^⌊epoch / every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_init / self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!("lr_init must be ≥ 0, got {}", self.lr_init)));
        }
        if !(self.lr_decay_factor >= 1.0) {
            return Err(Error::Config(format!("lr_decay_factor must be ≥ 1, got {}", self.lr_decay_factor)));
        }
        for (name, v) in [
            ("lr_decay_every", self.lr_decay_every),
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam needs 0 ≤ β < 1 and ε > 0".into()));
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.set(format!("{prefix}lr_init"), self.lr_init);
        kv.set(format!("{prefix}lr_decay_factor"), self.lr_decay_factor);
        kv.set(format!("{prefix}lr_decay_every"), self.lr_decay_every);
        kv.set(format!("{prefix}epochs"), self.epochs);
        kv.set(format!("{prefix}steps_per_epoch"), self.steps_per_epoch);
        kv.set(format!("{prefix}batch_size"), self.batch_size);
        kv.set(format!("{prefix}patch_size"), self.patch_size);
        kv.set(format!("{prefix}beta1"), self.beta1);
        kv.set(format!("{prefix}beta2"), self.beta2);
        kv.set(format!("{prefix}adam_eps"), self.adam_eps);
        kv.set(format!("{prefix}augment"), self.augment);
        kv.set(format!("{prefix}deterministic"), self.deterministic);
        kv.set(format!("{prefix}seed"), self.seed);
    }

    pub fn read_kv(&mut self, kv: &mut KeyValues, prefix: &str) -> Result<()> {
        kv.take_into(&format!("{prefix}lr_init"), &mut self.lr_init)?;
        kv.take_into(&format!("{prefix}lr_decay_factor"), &mut self.lr_decay_factor)?;
        kv.take_into(&format!("{prefix}lr_decay_every"), &mut self.lr_decay_every)?;
        kv.take_into(&format!("{prefix}epochs"), &mut self.epochs)?;
        kv.take_into(&format!("{prefix}steps_per_epoch"), &mut self.steps_per_epoch)?;
        kv.take_into(&format!("{prefix}batch_size"), &mut self.batch_size)?;
        kv.take_into(&format!("{prefix}patch_size"), &mut self.patch_size)?;
        kv.take_into(&format!("{prefix}beta1"), &mut self.beta1)?;
        kv.take_into(&format!("{prefix}beta2"), &mut self.beta2)?;
        kv.take_into(&format!("{prefix}adam_eps"), &mut self.adam_eps)?;
        kv.take_into(&format!("{prefix}augment"), &mut self.augment)?;
        kv.take_into(&format!("{prefix}deterministic"), &mut self.deterministic)?;
        kv.take_into(&format!("{prefix}seed"), &mut self.seed)?;
        Ok(())
    }
}

/// Bias-corrected Adam. Moments are kept in 64-bit.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// One update. Nothing is modified if any gradient is non-finite.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            g.check_finite("adam_step gradient")?;
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = gv.as_f64();
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let update = lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
                *pv = T::of(pv.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// One of the eight symmetries of the square: rotate by `op % 4` quarter
/// turns counter-clockwise, then mirror left-right if `op ≥ 4`.
pub fn dihedral(cube: &HsiCube, op: usize) -> HsiCube {
    let (b, h, w) = (cube.bands(), cube.height(), cube.width());
    let rot = op % 4;
    let (oh, ow) = if rot % 2 == 0 { (h, w) } else { (w, h) };
    let mut data = Vec::with_capacity(b * h * w);
    for band in 0..b {
        let src = cube.band(band);
        for y in 0..oh {
            for x in 0..ow {
                let x = if op >= 4 { ow - 1 - x } else { x };
                let (sy, sx) = match rot {
                    0 => (y, x),
                    1 => (x, w - 1 - y),
                    2 => (h - 1 - y, w - 1 - x),
                    _ => (h - 1 - x, y),
                };
                data.push(src[sy * w + sx]);
            }
        }
    }
    HsiCube::new(b, oh, ow, data).expect("dihedral preserves the element count")
}

/// Random crops of source cubes, optionally transformed by a random
/// dihedral symmetry.
pub struct PatchSampler<'a> {
    sources: &'a [HsiCube],
    size: usize,
    augment: bool,
}

impl<'a> PatchSampler<'a> {
    pub fn new(sources: &'a [HsiCube], size: usize, augment: bool) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Validation("no training cubes".into()));
        }
        if let Some(c) = sources.iter().find(|c| c.height() < size || c.width() < size) {
            return Err(Error::Validation(format!(
                "patch size {size} exceeds a {}×{} training cube",
                c.height(),
                c.width()
            )));
        }
        Ok(Self { sources, size, augment })
    }

    pub fn sample(&self, rng: &mut Stream) -> HsiCube {
        let src = &self.sources[rng.index(self.sources.len())];
        let y0 = rng.index(src.height() - self.size + 1);
        let x0 = rng.index(src.width() - self.size + 1);
        let patch = src.crop(y0, x0, self.size, self.size).expect("crop within bounds");
        if self.augment {
            dihedral(&patch, rng.index(8))
        } else {
            patch
        }
    }
}

/// Where training and validation cubes come from.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub cubes: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub rank: usize,
    pub seed: u64,
    pub val_case: NoiseCase,
    /// Noise ranges for both training and validation; case and seed are
    /// overridden per sample.
    pub noise: NoiseSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cubes: 80,
            bands: 8,
            height: 64,
            width: 64,
            rank: 3,
            seed: 0,
            val_case: NoiseCase::Mixture,
            noise: NoiseSpec::new(NoiseCase::Mixture, 0),
        }
    }
}

/// Clean training cubes and `(clean, noisy)` validation pairs. Every tenth
/// cube (index ≡ 9 mod 10) is held out.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<HsiCube>,
    pub val: Vec<(HsiCube, HsiCube)>,
    pub noise: NoiseSpec,
}

impl Dataset {
    pub fn synthetic(cfg: &DataConfig) -> Result<Self> {
        let mut seeds = Stream::new(cfg.seed, DATA_STREAM);
        let seeds: Vec<u64> = (0..cfg.cubes).map(|_| seeds.next_u64()).collect();
        let cubes = seeds
            .par_iter()
            .map(|&s| generate_synthetic_clean(cfg.bands, cfg.height, cfg.width, cfg.rank, s))
            .collect::<Result<Vec<_>>>()?;
        Self::split(cubes, cfg)
    }

    pub fn split(cubes: Vec<HsiCube>, cfg: &DataConfig) -> Result<Self> {
        let mut rng = Stream::new(cfg.seed, VAL_NOISE_STREAM);
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, cube) in cubes.into_iter().enumerate() {
            if i % 10 == 9 {
                let spec = NoiseSpec {
                    case: cfg.val_case,
                    seed: rng.next_u64(),
                    ..cfg.noise.clone()
                };
                let noisy = corrupt(&cube, &spec)?;
                val.push((cube, noisy));
            } else {
                train.push(cube);
            }
        }
        if train.is_empty() {
            return Err(Error::Validation("no training cubes".into()));
        }
        Ok(Self {
            train,
            val,
            noise: cfg.noise.clone(),
        })
    }
}

/// `(noisy input, clean target)` for one sample, fully determined by
/// `(seed, index)`.
pub fn training_sample(sampler: &PatchSampler<'_>, noise: &NoiseSpec, seed: u64, index: u64) -> Result<(HsiCube, HsiCube)> {
    let mut rng = Stream::new(seed, SAMPLE_STREAM_BASE + index);
    let clean = sampler.sample(&mut rng);
    let spec = NoiseSpec {
        case: CURRICULUM[rng.index(CURRICULUM.len())],
        seed: rng.next_u64(),
        ..noise.clone()
    };
    Ok((corrupt(&clean, &spec)?, clean))
}

/// Mean MSE over `batch` and its gradient for every parameter. Items run in
/// parallel, each on its own tape.
pub fn batch_loss_and_grads(
    model: &HsdmModel<f32>,
    batch: &[(Tensor<f32>, Tensor<f32>)],
    deterministic: bool,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let item = |(x, y): &(Tensor<f32>, Tensor<f32>)| -> Result<(f64, Vec<Tensor<f32>>)> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let out = model.forward_tape(&tape, xv)?;
        let loss = tape.mse(out, yv)?;
        tape.backward(loss)?;
        Ok((tape.value(loss).data()[0] as f64, model.grads(&tape)))
    };
    let add = |mut a: (f64, Vec<Tensor<f32>>), b: (f64, Vec<Tensor<f32>>)| {
        a.0 += b.0;
        for (ga, gb) in a.1.iter_mut().zip(&b.1) {
            ga.data_mut().iter_mut().zip(gb.data()).for_each(|(p, q)| *p += q);
        }
        a
    };
    let (loss, mut grads) = if deterministic {
        let items = batch.par_iter().map(item).collect::<Result<Vec<_>>>()?;
        let mut items = items.into_iter();
        let first = items.next().expect("non-empty batch");
        items.fold(first, add)
    } else {
        batch
            .par_iter()
            .map(item)
            .try_reduce_with(|a, b| Ok(add(a, b)))
            .expect("non-empty batch")?
    };
    let scale = 1.0 / batch.len() as f32;
    grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= scale));
    Ok((loss / batch.len() as f64, grads))
}

/// Denoises whole cubes and returns `(mean PSNR of outputs, mean PSNR of inputs)`.
pub fn validate(model: &HsdmModel<f32>, val: &[(HsiCube, HsiCube)]) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let scores = val
        .par_iter()
        .map(|(clean, noisy)| {
            let out = HsiCube::from_tensor(&model.forward(&noisy.to_tensor())?)?;
            Ok((psnr(clean, &out)?, psnr(clean, noisy)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    Ok((
        scores.iter().map(|s| s.0).sum::<f64>() / n,
        scores.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_psnr: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.step, self.loss, self.lr, self.val_psnr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub steps: usize,
    pub noisy_val_psnr: f64,
    pub final_val_psnr: f64,
}

/// Trains `model` in place. With `out_dir`, the log and a checkpoint are
/// rewritten after every epoch; on a non-finite loss the run stops with an
/// error and the previous checkpoint is left untouched.
pub fn train(
    model: &mut HsdmModel<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    let sampler = PatchSampler::new(&data.train, cfg.patch_size, cfg.augment)?;
    let mut adam = Adam::from_config(cfg);
    let (_, noisy_val_psnr) = validate(model, &data.val)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let base = (step * cfg.batch_size) as u64;
            let batch = (0..cfg.batch_size as u64)
                .into_par_iter()
                .map(|i| {
                    let (x, y) = training_sample(&sampler, &data.noise, cfg.seed, base + i)?;
                    Ok((x.to_tensor(), y.to_tensor()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_loss_and_grads(model, &batch, cfg.deterministic)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("training loss at step {step}"),
                    index: None,
                });
            }
            let mut params: Vec<&mut Tensor<f32>> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            adam.step(&mut params, &grads, lr)?;
            loss_sum += loss;
            step += 1;
        }
        let (val_psnr, _) = validate(model, &data.val)?;
        let row = LogRow {
            epoch,
            step,
            loss: loss_sum / cfg.steps_per_epoch as f64,
            lr,
            val_psnr,
        };
        on_epoch(&row);
        log.push(row);
        if let Some(dir) = out_dir {
            write_epoch_outputs(model, &log, dir)?;
        }
    }
    let final_val_psnr = log.last().map_or(f64::NAN, |r| r.val_psnr);
    Ok(TrainReport {
        log,
        steps: step,
        noisy_val_psnr,
        final_val_psnr,
    })
}

fn write_epoch_outputs(model: &HsdmModel<f32>, log: &[LogRow], dir: &Path) -> Result<()> {
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    model.save(&tmp)?;
    let dest = dir.join(CHECKPOINT_FILE);
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
    let mut text = format!("{LOG_HEADER}\n");
    for row in log {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    let path = dir.join(LOG_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 3e-4);
        assert_eq!(cfg.lr_at(19), 3e-4);
        assert!((cfg.lr_at(20) - 6e-5).abs() < 1e-18);
        assert!((cfg.lr_at(59) - 1.2e-5).abs() < 1e-18);
        for e in 1..100 {
            assert!(cfg.lr_at(e) <= cfg.lr_at(e - 1));
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::new(&[1], vec![0.5]).unwrap();
        let g = Tensor::<f64>::new(&[1], vec![1.0]).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut [&mut p], &[g], 0.01).unwrap();
        assert!((0.5 - p.data()[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_decays_moments() {
        let mut p = Tensor::<f64>::new(&[2], vec![0.5, -1.0]).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut [&mut p], &[Tensor::new(&[2], vec![1.0, 1.0]).unwrap()], 0.01).unwrap();
        let before = p.clone();
        let (m0, v0) = (adam.moments().0[0][0], adam.moments().1[0][0]);
        adam.step(&mut [&mut p], &[Tensor::zeros(&[2])], 0.0).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.moments().0[0][0], 0.9 * m0);
        assert_eq!(adam.moments().1[0][0], 0.999 * v0);
    }

    #[test]
    fn adam_rejects_non_finite_gradients_untouched() {
        let mut p = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::new(&[2], vec![0.1, f32::NAN]).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        assert!(matches!(adam.step(&mut [&mut p], &[g], 0.1), Err(Error::NonFinite { .. })));
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn dihedral_group_structure() {
        let c = HsiCube::new(2, 2, 3, (0..12).map(|i| i as f32).collect()).unwrap();
        assert_eq!(dihedral(&c, 0), c);
        // one quarter turn counter-clockwise of [[0,1,2],[3,4,5]]
        assert_eq!(&dihedral(&c, 1).data()[..6], &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
        assert_eq!(&dihedral(&c, 4).data()[..6], &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        let mut r = c.clone();
        for _ in 0..4 {
            r = dihedral(&r, 1);
        }
        assert_eq!(r, c);
        for op in 4..8 {
            assert_eq!(dihedral(&dihedral(&c, op), op), c, "reflection {op}");
        }
    }

    #[test]
    fn sampler_emits_sub_cubes() {
        let src = vec![HsiCube::new(1, 5, 6, (0..30).map(|i| i as f32).collect()).unwrap()];
        let s = PatchSampler::new(&src, 3, false).unwrap();
        let mut rng = Stream::new(3, 0);
        for _ in 0..20 {
            let p = s.sample(&mut rng);
            let (y0, x0) = ((p.data()[0] as usize) / 6, (p.data()[0] as usize) % 6);
            assert_eq!(p, src[0].crop(y0, x0, 3, 3).unwrap());
        }
        assert!(PatchSampler::new(&src, 7, false).is_err());
    }

    #[test]
    fn identity_model_commutes_with_augmentation() {
        let mut m = HsdmModel::<f32>::new(ModelConfig { hidden_dim: 8, state_dim: 4, num_layers: 1, blocks_per_layer: 1, ..ModelConfig::desk(2) }, 0).unwrap();
        m.zero_head();
        let c = generate_synthetic_clean(2, 6, 6, 2, 1).unwrap();
        for op in 0..8 {
            let a = dihedral(&c, op);
            assert_eq!(m.forward(&a.to_tensor()).unwrap(), a.to_tensor());
        }
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = TrainConfig { seed: 17, augment: false, ..TrainConfig::desk() };
        let mut kv = KeyValues::default();
        cfg.write_kv(&mut kv, "train.");
        let mut kv = KeyValues::parse(&kv.to_text()).unwrap();
        let mut back = TrainConfig::default();
        back.read_kv(&mut kv, "train.").unwrap();
        kv.finish().unwrap();
        assert_eq!(back, cfg);
    }
}
