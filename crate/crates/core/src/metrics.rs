//! Full-reference quality metrics for hyperspectral cubes.
//!
//! PSNR and SSIM are computed per band and averaged over bands; SAM is the
//! mean spectral angle over pixels. Inputs are clamped to `[−0.5, 1.5]`
//! before evaluation and the data range is taken as 1.

use std::fmt::Write as _;

use crate::noise::HsiCube;
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SAM_MIN_NORM: f64 = 1e-8;

#[inline]
fn clamp(v: f32) -> f64 {
    (v as f64).clamp(-0.5, 1.5)
}

fn same_dims(x: &HsiCube, y: &HsiCube) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::shape("metrics", &x.dims(), &y.dims()));
    }
    Ok(())
}

/// PSNR of each band in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr_per_band(x: &HsiCube, y: &HsiCube) -> Result<Vec<f64>> {
    same_dims(x, y)?;
    Ok((0..x.bands())
        .map(|b| {
            let (xb, yb) = (x.band(b), y.band(b));
            let sse: f64 = xb.iter().zip(yb).map(|(&p, &q)| (clamp(p) - clamp(q)).powi(2)).sum();
            let mse = sse / xb.len() as f64;
            if mse == 0.0 {
                PSNR_CAP_DB
            } else {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
            }
        })
        .collect())
}

/// Mean over bands of the per-band PSNR.
pub fn psnr(x: &HsiCube, y: &HsiCube) -> Result<f64> {
    Ok(mean(&psnr_per_band(x, y)?))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" Gaussian filtering of an `h×w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * p[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM of each band: 11×11 Gaussian window (σ = 1.5),
/// K₁ = 0.01, K₂ = 0.03, valid windows only.
pub fn ssim_per_band(x: &HsiCube, y: &HsiCube) -> Result<Vec<f64>> {
    same_dims(x, y)?;
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Validation(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
        )));
    }
    let k = gaussian_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    Ok((0..x.bands())
        .map(|b| {
            let xb: Vec<f64> = x.band(b).iter().map(|&v| clamp(v)).collect();
            let yb: Vec<f64> = y.band(b).iter().map(|&v| clamp(v)).collect();
            let xx: Vec<f64> = xb.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = yb.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = xb.iter().zip(&yb).map(|(a, b)| a * b).collect();
            let mx = filter_valid(&xb, h, w, &k);
            let my = filter_valid(&yb, h, w, &k);
            let exx = filter_valid(&xx, h, w, &k);
            let eyy = filter_valid(&yy, h, w, &k);
            let exy = filter_valid(&xy, h, w, &k);
            let total: f64 = (0..mx.len())
                .map(|i| {
                    let (mu_x, mu_y) = (mx[i], my[i]);
                    let vx = exx[i] - mu_x * mu_x;
                    let vy = eyy[i] - mu_y * mu_y;
                    let cov = exy[i] - mu_x * mu_y;
                    ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                        / ((mu_x * mu_x + mu_y * mu_y + c1) * (vx + vy + c2))
                })
                .sum();
            total / mx.len() as f64
        })
        .collect())
}

pub fn ssim(x: &HsiCube, y: &HsiCube) -> Result<f64> {
    Ok(mean(&ssim_per_band(x, y)?))
}

/// Mean spectral angle in radians. Pixels where either spectrum has norm
/// below 1e-8 contribute 0.
pub fn sam(x: &HsiCube, y: &HsiCube) -> Result<f64> {
    same_dims(x, y)?;
    let plane = x.height() * x.width();
    let mut total = 0.0;
    for i in 0..plane {
        let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
        for b in 0..x.bands() {
            let (p, q) = (clamp(x.band(b)[i]), clamp(y.band(b)[i]));
            dot += p * q;
            nx += p * p;
            ny += q * q;
        }
        if nx.sqrt() < SAM_MIN_NORM || ny.sqrt() < SAM_MIN_NORM {
            continue;
        }
        total += (dot / (nx * ny).sqrt()).clamp(-1.0, 1.0).acos();
    }
    Ok(total / plane as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Aggregate quality of a test cube against its clean reference.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_rad: f64,
    pub per_band_psnr: Vec<f64>,
    pub per_band_ssim: Vec<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "psnr_db,ssim,sam_rad";

    pub fn evaluate(clean: &HsiCube, test: &HsiCube) -> Result<Self> {
        let per_band_psnr = psnr_per_band(clean, test)?;
        let per_band_ssim = ssim_per_band(clean, test)?;
        Ok(Self {
            psnr_db: mean(&per_band_psnr),
            ssim: mean(&per_band_ssim),
            sam_rad: sam(clean, test)?,
            per_band_psnr,
            per_band_ssim,
        })
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{},{},{}\n", Self::CSV_HEADER, self.psnr_db, self.ssim, self.sam_rad)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "psnr_db = {:.4}\nssim = {:.6}\nsam_rad = {:.6}\n",
            self.psnr_db, self.ssim, self.sam_rad
        );
        for (b, (p, q)) in self.per_band_psnr.iter().zip(&self.per_band_ssim).enumerate() {
            let _ = writeln!(s, "band {b}: psnr_db = {p:.4}, ssim = {q:.6}");
        }
        s
    }
}
