//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hsdm_core::HsiCube;

/// PCG32 (XSH-RR) written from the published reference algorithm.
pub struct RefPcg32 {
    state: u64,
    inc: u64,
}

impl RefPcg32 {
    const MUL: u64 = 6364136223846793005;

    pub fn new(init_state: u64, init_seq: u64) -> Self {
        let mut r = Self {
            state: 0,
            inc: (init_seq << 1) | 1,
        };
        r.next_u32();
        r.state = r.state.wrapping_add(init_state);
        r.next_u32();
        r
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(Self::MUL).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u32() as f64 + 0.5) / 4_294_967_296.0
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

pub fn random_cube(bands: usize, h: usize, w: usize, rng: &mut RefPcg32) -> HsiCube {
    HsiCube::new(bands, h, w, (0..bands * h * w).map(|_| rng.uniform() as f32).collect()).unwrap()
}

fn px(c: &HsiCube, b: usize, y: usize, x: usize) -> f64 {
    (c.get(b, y, x) as f64).clamp(-0.5, 1.5)
}

pub fn brute_psnr(a: &HsiCube, b: &HsiCube) -> f64 {
    let mut total = 0.0;
    for band in 0..a.bands() {
        let mut sse = 0.0;
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = px(a, band, y, x) - px(b, band, y, x);
                sse += d * d;
            }
        }
        let mse = sse / (a.height() * a.width()) as f64;
        total += if mse == 0.0 { 100.0 } else { (10.0 * (1.0 / mse).log10()).min(100.0) };
    }
    total / a.bands() as f64
}

/// Direct 2-D windowed SSIM with two-pass moments.
pub fn brute_ssim(a: &HsiCube, b: &HsiCube) -> f64 {
    let (win, sigma) = (11usize, 1.5f64);
    let half = (win / 2) as f64;
    let mut k = vec![vec![0.0; win]; win];
    let mut norm = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - half, j as f64 - half);
            *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for band in 0..a.bands() {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=a.height() - win {
            for x0 in 0..=a.width() - win {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let wt = k[i][j] / norm;
                        mx += wt * px(a, band, y0 + i, x0 + j);
                        my += wt * px(b, band, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let wt = k[i][j] / norm;
                        let (dx, dy) = (px(a, band, y0 + i, x0 + j) - mx, px(b, band, y0 + i, x0 + j) - my);
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / a.bands() as f64
}

pub fn brute_sam(a: &HsiCube, b: &HsiCube) -> f64 {
    let mut total = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let u: Vec<f64> = (0..a.bands()).map(|k| px(a, k, y, x)).collect();
            let v: Vec<f64> = (0..a.bands()).map(|k| px(b, k, y, x)).collect();
            let nu = u.iter().map(|t| t * t).sum::<f64>().sqrt();
            let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if nu < 1e-8 || nv < 1e-8 {
                continue;
            }
            let dot: f64 = u.iter().zip(&v).map(|(p, q)| p * q).sum();
            total += (dot / (nu * nv)).clamp(-1.0, 1.0).acos();
        }
    }
    total / (a.height() * a.width()) as f64
}
