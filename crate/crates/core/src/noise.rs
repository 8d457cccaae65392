//! Hyperspectral cubes, seeded degradations and a synthetic scene generator.
//!
//! # Random streams
//!
//! A degradation with seed `s` draws band selection from PCG32 stream
//! `(s, 0)` and everything belonging to band `b` from stream `(s, b + 1)`, so
//! bands can be synthesized in parallel with identical results. Within a
//! band the draw order is fixed:
//!
//! 1. `σ_b ~ U[σ_lo, σ_hi] / 255`, then one normal per pixel (row-major);
//! 2. mixture only: one `index(4)` choosing none/stripe/deadline/impulse;
//! 3. stripe/deadline: `p ~ U[p_lo, p_hi]`, `round(p·W)` distinct columns,
//!    and for stripes one offset `U(−a, a)` per chosen column;
//! 4. impulse: `p ~ U[p_lo, p_hi]`, then per pixel a uniform `< p` test and,
//!    on hit, a coin for 0 or 1.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::rng::Stream;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// A hyperspectral image `[bands × height × width]`, band-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != bands * height * width {
            return Err(Error::shape("HsiCube::new", &[bands, height, width], &[data.len()]));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self {
            bands,
            height,
            width,
            data: vec![0.0; bands * height * width],
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.bands, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[b * plane..(b + 1) * plane]
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&self.dims(), self.data.clone()).expect("cube length matches dims")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let (b, h, w) = t.dims3("HsiCube::from_tensor")?;
        Self::new(b, h, w, t.data().to_vec())
    }

    /// Spatial sub-cube with top-left corner `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::shape("HsiCube::crop", &self.dims(), &[y0 + h, x0 + w]));
        }
        let mut data = Vec::with_capacity(self.bands * h * w);
        for b in 0..self.bands {
            for y in y0..y0 + h {
                let row = (b * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Self::new(self.bands, h, w, data)
    }

    /// Fails unless every value lies in `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<()> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(i) => Err(Error::Validation(format!(
                "cube value {} at flat index {i} outside [0, 1]",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseCase {
    NoniidGauss,
    GaussStripe,
    GaussDeadline,
    GaussImpulse,
    Mixture,
}

impl NoiseCase {
    pub const ALL: [NoiseCase; 5] = [
        NoiseCase::NoniidGauss,
        NoiseCase::GaussStripe,
        NoiseCase::GaussDeadline,
        NoiseCase::GaussImpulse,
        NoiseCase::Mixture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseCase::NoniidGauss => "noniid_gauss",
            NoiseCase::GaussStripe => "gauss_stripe",
            NoiseCase::GaussDeadline => "gauss_deadline",
            NoiseCase::GaussImpulse => "gauss_impulse",
            NoiseCase::Mixture => "mixture",
        }
    }
}

impl fmt::Display for NoiseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise case `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Structured {
    None,
    Stripe,
    Deadline,
    Impulse,
}

/// A degradation recipe. Sigma is in 8-bit units and divided by 255 when
/// applied to the `[0, 1]` cube.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub case: NoiseCase,
    pub sigma_range: (f64, f64),
    pub stripe_fraction_range: (f64, f64),
    pub impulse_range: (f64, f64),
    pub affected_band_fraction: f64,
    /// Stripe offsets are drawn from `U(−a, a)`.
    pub stripe_amplitude: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(case: NoiseCase, seed: u64) -> Self {
        Self {
            case,
            sigma_range: (10.0, 70.0),
            stripe_fraction_range: (0.05, 0.15),
            impulse_range: (0.10, 0.70),
            affected_band_fraction: 1.0 / 3.0,
            stripe_amplitude: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): (f64, f64), min: f64, max: f64| {
            if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) must satisfy {min} ≤ lo ≤ hi ≤ {max}")));
            }
            Ok(())
        };
        check("sigma", self.sigma_range, 0.0, 255.0)?;
        check("stripe fraction", self.stripe_fraction_range, 0.0, 1.0)?;
        check("impulse", self.impulse_range, 0.0, 1.0)?;
        check("affected band fraction", (self.affected_band_fraction, self.affected_band_fraction), 0.0, 1.0)?;
        check("stripe amplitude", (0.0, self.stripe_amplitude), 0.0, 1.0)
    }

    /// Number of bands receiving structured noise in the stripe, deadline and
    /// impulse cases: `⌊B · fraction⌋`.
    pub fn affected_band_count(&self, bands: usize) -> usize {
        (bands as f64 * self.affected_band_fraction + 1e-9).floor() as usize
    }

    fn band_stream(&self, band: usize) -> Stream {
        Stream::new(self.seed, band as u64 + 1)
    }
}

/// Applies `spec` to a clean cube with values in `[0, 1]`. The result is not
/// clamped.
pub fn corrupt(clean: &HsiCube, spec: &NoiseSpec) -> Result<HsiCube> {
    clean.check_unit_range()?;
    spec.validate()?;
    let (bands, h, w) = (clean.bands, clean.height, clean.width);

    let mut selected = vec![false; bands];
    if matches!(spec.case, NoiseCase::GaussStripe | NoiseCase::GaussDeadline | NoiseCase::GaussImpulse) {
        let mut sel = Stream::new(spec.seed, 0);
        for b in sel.choose_distinct(bands, spec.affected_band_count(bands)) {
            selected[b] = true;
        }
    }

    let mut out = clean.clone();
    out.data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(b, plane)| {
            let mut rng = spec.band_stream(b);
            let sigma = rng.uniform_in(spec.sigma_range.0, spec.sigma_range.1) / 255.0;
            for v in plane.iter_mut() {
                *v = (*v as f64 + sigma * rng.normal()) as f32;
            }
            let structured = match spec.case {
                NoiseCase::NoniidGauss => Structured::None,
                NoiseCase::Mixture => match rng.index(4) {
                    0 => Structured::None,
                    1 => Structured::Stripe,
                    2 => Structured::Deadline,
                    _ => Structured::Impulse,
                },
                _ if !selected[b] => Structured::None,
                NoiseCase::GaussStripe => Structured::Stripe,
                NoiseCase::GaussDeadline => Structured::Deadline,
                NoiseCase::GaussImpulse => Structured::Impulse,
            };
            apply_structured(plane, h, w, structured, spec, &mut rng);
        });
    Ok(out)
}

fn apply_structured(plane: &mut [f32], h: usize, w: usize, kind: Structured, spec: &NoiseSpec, rng: &mut Stream) {
    match kind {
        Structured::None => {}
        Structured::Stripe | Structured::Deadline => {
            let (lo, hi) = spec.stripe_fraction_range;
            let p = rng.uniform_in(lo, hi);
            let count = (p * w as f64).round() as usize;
            for col in rng.choose_distinct(w, count) {
                if kind == Structured::Stripe {
                    let offset = rng.uniform_in(-spec.stripe_amplitude, spec.stripe_amplitude);
                    for y in 0..h {
                        let v = &mut plane[y * w + col];
                        *v = (*v as f64 + offset) as f32;
                    }
                } else {
                    for y in 0..h {
                        plane[y * w + col] = 0.0;
                    }
                }
            }
        }
        Structured::Impulse => {
            let (lo, hi) = spec.impulse_range;
            let p = rng.uniform_in(lo, hi);
            for v in plane.iter_mut() {
                if rng.uniform() < p {
                    *v = if rng.coin() { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

/// A synthetic linear-mixture scene and its ingredients.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub cube: HsiCube,
    /// `rank` endmember spectra of length `bands`, rescaled like the cube.
    pub spectra: Vec<Vec<f64>>,
    /// `rank` abundance maps of `height·width` values summing to 1 per pixel.
    pub abundances: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SyntheticOptions {
    /// Use flat spectra; with `rank = 1` the cube is then spatially constant.
    pub constant_spectra: bool,
}

/// Low-rank clean cube: `Σ_k a_k(x, y) s_k(λ)` with per-pixel convex
/// abundances built from Gaussian blobs and smooth spectra, min-max
/// rescaled to `[0, 1]`.
pub fn generate_synthetic_clean(bands: usize, height: usize, width: usize, rank: usize, seed: u64) -> Result<HsiCube> {
    Ok(generate_synthetic_scene(bands, height, width, rank, seed, SyntheticOptions::default())?.cube)
}

pub fn generate_synthetic_scene(
    bands: usize,
    height: usize,
    width: usize,
    rank: usize,
    seed: u64,
    opts: SyntheticOptions,
) -> Result<SyntheticScene> {
    if rank == 0 {
        return Err(Error::Config("synthetic cube rank must be ≥ 1".into()));
    }
    if bands == 0 || height == 0 || width == 0 {
        return Err(Error::Config(format!(
            "synthetic cube dims must be positive, got {bands}×{height}×{width}"
        )));
    }
    let mut rng = Stream::new(seed, 0x5eed);

    let mut spectra: Vec<Vec<f64>> = (0..rank)
        .map(|_| {
            if opts.constant_spectra {
                return vec![rng.uniform_in(0.2, 0.8); bands];
            }
            let base = rng.uniform_in(0.2, 0.8);
            let bumps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.uniform_in(-0.4, 0.4), rng.uniform(), rng.uniform_in(0.1, 0.4)))
                .collect();
            (0..bands)
                .map(|i| {
                    let lam = if bands > 1 { i as f64 / (bands - 1) as f64 } else { 0.5 };
                    let v: f64 = base
                        + bumps
                            .iter()
                            .map(|&(amp, c, wd)| amp * (-(lam - c).powi(2) / (2.0 * wd * wd)).exp())
                            .sum::<f64>();
                    v.clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();

    let plane = height * width;
    let scale = height.max(width) as f64;
    let mut abundances: Vec<Vec<f64>> = (0..rank)
        .map(|_| {
            let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    (
                        rng.uniform_in(0.0, height as f64),
                        rng.uniform_in(0.0, width as f64),
                        rng.uniform_in(0.1, 0.4) * scale,
                        rng.uniform_in(0.5, 1.5),
                    )
                })
                .collect();
            (0..plane)
                .map(|i| {
                    let (y, x) = ((i / width) as f64, (i % width) as f64);
                    0.05 + blobs
                        .iter()
                        .map(|&(cy, cx, r, wt)| wt * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp())
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    for i in 0..plane {
        let total: f64 = abundances.iter().map(|a| a[i]).sum();
        abundances.iter_mut().for_each(|a| a[i] /= total);
    }

    let mut values = vec![0.0f64; bands * plane];
    for b in 0..bands {
        for i in 0..plane {
            values[b * plane + i] = (0..rank).map(|k| abundances[k][i] * spectra[k][b]).sum();
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 1e-12 {
        let rescale = |v: &mut f64| *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
        values.iter_mut().for_each(rescale);
        spectra.iter_mut().flatten().for_each(|v| *v = (*v - lo) / (hi - lo));
    }
    let cube = HsiCube::new(bands, height, width, values.into_iter().map(|v| v as f32).collect())?;
    Ok(SyntheticScene {
        cube,
        spectra,
        abundances,
    })
}
