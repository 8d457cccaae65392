//! Scaling benchmarks: wall-clock medians over sequence lengths `L = H·W`
//! and least-squares slopes of `log t` against `log L`.

use std::fmt;
use std::fmt::Write as _;
use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::io::KeyValues;
use crate::rng::Stream;
use crate::scan_path::build_path;
use crate::ssm::{scan_chunked, SsmParams};
use crate::tensor::kernels::{conv2d_same, mm_nn, mm_tn, permute_columns};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// 3×3 convolution, `C → C`.
    Conv,
    /// Global softmax attention with a materialized `L×L` score matrix.
    SelfAttn,
    /// Every position attends to one mean-pooled token per `h×w` window.
    CrossAttn,
    /// Selective scans along `T` serpentine paths.
    HsdmScan,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [Self::Conv, Self::SelfAttn, Self::CrossAttn, Self::HsdmScan];

    pub fn name(self) -> &'static str {
        match self {
            Self::Conv => "conv",
            Self::SelfAttn => "self_attn",
            Self::CrossAttn => "cross_attn",
            Self::HsdmScan => "hsdm_scan",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown kernel `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub kernels: Vec<KernelKind>,
    pub lengths: Vec<usize>,
    pub channels: usize,
    pub window: (usize, usize),
    pub directions: usize,
    pub state_dim: usize,
    pub chunk_len: usize,
    pub reps: usize,
    pub warmup: usize,
    /// Self-attention points whose score matrix exceeds this are skipped.
    pub memory_budget_bytes: usize,
    /// Worker threads for the kernels; 1 for slope fitting.
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kernels: KernelKind::ALL.to_vec(),
            lengths: vec![1024, 4096, 16384, 65536],
            channels: 8,
            window: (8, 8),
            directions: 2,
            state_dim: 16,
            chunk_len: 64,
            reps: 5,
            warmup: 1,
            memory_budget_bytes: 1 << 30,
            threads: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let mut ls = self.lengths.clone();
        ls.sort_unstable();
        ls.dedup();
        if ls.len() < 4 || ls[0] == 0 || ls[ls.len() - 1] < 16 * ls[0] {
            return Err(Error::Config(
                "bench needs at least 4 distinct lengths spanning a 16× range".into(),
            ));
        }
        if self.reps < 5 {
            return Err(Error::Config(format!("bench needs at least 5 repetitions, got {}", self.reps)));
        }
        if self.channels == 0 || self.state_dim == 0 || self.chunk_len == 0 || self.threads == 0 {
            return Err(Error::Config("channels, state_dim, chunk_len and threads must be positive".into()));
        }
        if !(1..=8).contains(&self.directions) {
            return Err(Error::Config(format!("directions must be in 1..=8, got {}", self.directions)));
        }
        if self.window.0 == 0 || self.window.1 == 0 {
            return Err(Error::Config("window must be non-empty".into()));
        }
        Ok(())
    }

    pub fn read_kv(&mut self, kv: &mut KeyValues, prefix: &str) -> Result<()> {
        if let Some(s) = kv.take::<String>(&format!("{prefix}kernels"))? {
            self.kernels = s.split(',').map(|k| k.trim().parse()).collect::<Result<_>>()?;
        }
        if let Some(s) = kv.take::<String>(&format!("{prefix}lengths"))? {
            self.lengths = s
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("invalid length `{v}`"))))
                .collect::<Result<_>>()?;
        }
        kv.take_into(&format!("{prefix}channels"), &mut self.channels)?;
        kv.take_into(&format!("{prefix}window_h"), &mut self.window.0)?;
        kv.take_into(&format!("{prefix}window_w"), &mut self.window.1)?;
        kv.take_into(&format!("{prefix}directions"), &mut self.directions)?;
        kv.take_into(&format!("{prefix}state_dim"), &mut self.state_dim)?;
        kv.take_into(&format!("{prefix}chunk_len"), &mut self.chunk_len)?;
        kv.take_into(&format!("{prefix}reps"), &mut self.reps)?;
        kv.take_into(&format!("{prefix}warmup"), &mut self.warmup)?;
        kv.take_into(&format!("{prefix}memory_budget_bytes"), &mut self.memory_budget_bytes)?;
        kv.take_into(&format!("{prefix}threads"), &mut self.threads)?;
        kv.take_into(&format!("{prefix}seed"), &mut self.seed)?;
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        let join = |v: Vec<String>| v.join(",");
        kv.set(format!("{prefix}kernels"), join(self.kernels.iter().map(|k| k.to_string()).collect()));
        kv.set(format!("{prefix}lengths"), join(self.lengths.iter().map(|l| l.to_string()).collect()));
        kv.set(format!("{prefix}channels"), self.channels);
        kv.set(format!("{prefix}window_h"), self.window.0);
        kv.set(format!("{prefix}window_w"), self.window.1);
        kv.set(format!("{prefix}directions"), self.directions);
        kv.set(format!("{prefix}state_dim"), self.state_dim);
        kv.set(format!("{prefix}chunk_len"), self.chunk_len);
        kv.set(format!("{prefix}reps"), self.reps);
        kv.set(format!("{prefix}warmup"), self.warmup);
        kv.set(format!("{prefix}memory_budget_bytes"), self.memory_budget_bytes);
        kv.set(format!("{prefix}threads"), self.threads);
        kv.set(format!("{prefix}seed"), self.seed);
    }
}

/// `(H, W)` with `H·W = len` and `H` the largest divisor not above `√len`.
pub fn grid_for(len: usize) -> (usize, usize) {
    let mut h = (len as f64).sqrt() as usize;
    while h > 1 && len % h != 0 {
        h -= 1;
    }
    let h = h.max(1);
    (h, len / h)
}

/// Timing of one kernel at one length; `None` fields mark a skipped point.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchPoint {
    pub kernel: KernelKind,
    pub len: usize,
    pub timing: Option<Timing>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub median_s: f64,
    pub p10_s: f64,
    pub p90_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeFit {
    pub kernel: KernelKind,
    pub slope: f64,
    /// RMS residual of the fit in natural-log units.
    pub residual: f64,
    pub points: usize,
    /// False when a timing is within 100× of the timer resolution or fewer
    /// than two points were measured.
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub points: Vec<BenchPoint>,
    pub slopes: Vec<SlopeFit>,
    pub timer_resolution_s: f64,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "kernel,L,median_s,p10_s,p90_s";
    pub const SLOPES_HEADER: &'static str = "kernel,slope,residual,points,reliable";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for p in &self.points {
            match p.timing {
                Some(t) => writeln!(s, "{},{},{},{},{}", p.kernel, p.len, t.median_s, t.p10_s, t.p90_s),
                None => writeln!(s, "{},{},,,", p.kernel, p.len),
            }
            .expect("writing to a String");
        }
        s
    }

    pub fn slopes_csv(&self) -> String {
        let mut s = format!("{}\n", Self::SLOPES_HEADER);
        for f in &self.slopes {
            writeln!(s, "{},{},{},{},{}", f.kernel, f.slope, f.residual, f.points, f.reliable)
                .expect("writing to a String");
        }
        s
    }

    pub fn slope(&self, kernel: KernelKind) -> Option<&SlopeFit> {
        self.slopes.iter().find(|f| f.kernel == kernel)
    }

    /// Whether median time never decreases with `L` for `kernel`.
    pub fn is_monotone(&self, kernel: KernelKind) -> bool {
        let mut ts: Vec<(usize, f64)> = self
            .points
            .iter()
            .filter(|p| p.kernel == kernel)
            .filter_map(|p| p.timing.map(|t| (p.len, t.median_s)))
            .collect();
        ts.sort_by_key(|&(l, _)| l);
        ts.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

/// Least-squares `(slope, intercept, rms residual)` of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    (slope, icpt, (rss / n).sqrt())
}

/// Smallest observable nonzero step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn random(n: usize, rng: &mut Stream) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect()
}

/// A prepared kernel invocation at one length.
type Job = Box<dyn FnMut()>;

fn prepare(kind: KernelKind, len: usize, cfg: &BenchConfig) -> Result<Option<Job>> {
    let c = cfg.channels;
    let (h, w) = grid_for(len);
    let mut rng = Stream::new(cfg.seed, len as u64);
    let x = random(c * len, &mut rng);
    let scale = 1.0 / (c as f32).sqrt();
    Ok(Some(match kind {
        KernelKind::Conv => {
            let wt = random(c * c * 9, &mut rng);
            let b = random(c, &mut rng);
            Box::new(move || {
                black_box(conv2d_same(&x, &wt, &b, c, c, h, w));
            })
        }
        KernelKind::SelfAttn => {
            if len.saturating_mul(len).saturating_mul(4) > cfg.memory_budget_bytes {
                return Ok(None);
            }
            let wq = random(c * c, &mut rng);
            let wk = random(c * c, &mut rng);
            let wv = random(c * c, &mut rng);
            Box::new(move || {
                let q = mm_nn(&wq, &x, c, c, len);
                let k = mm_nn(&wk, &x, c, c, len);
                let v = mm_nn(&wv, &x, c, c, len);
                let mut scores = mm_tn(&q, &k, c, len, len);
                softmax_rows(&mut scores, len, scale);
                // out[c × L] = v · Pᵀ
                black_box(mm_nt_rows(&v, &scores, c, len));
            })
        }
        KernelKind::CrossAttn => {
            let (wh, ww) = cfg.window;
            let (ph, pw) = (h.div_ceil(wh), w.div_ceil(ww));
            let m = ph * pw;
            let wq = random(c * c, &mut rng);
            let wk = random(c * c, &mut rng);
            let wv = random(c * c, &mut rng);
            Box::new(move || {
                let pooled = window_pool(&x, c, h, w, wh, ww);
                let q = mm_nn(&wq, &x, c, c, len);
                let k = mm_nn(&wk, &pooled, c, c, m);
                let v = mm_nn(&wv, &pooled, c, c, m);
                let mut scores = mm_tn(&q, &k, c, len, m);
                softmax_rows(&mut scores, m, scale);
                black_box(mm_nt_rows(&v, &scores, c, m));
            })
        }
        KernelKind::HsdmScan => {
            let params = SsmParams::<f32>::init(c, cfg.state_dim, &mut rng);
            let xt = Tensor::new(&[c, len], x)?;
            let paths = (0..cfg.directions)
                .map(|t| build_path((t % 2) * 4 + t / 2, h, w))
                .collect::<Result<Vec<_>>>()?;
            let chunk = cfg.chunk_len;
            Box::new(move || {
                for p in &paths {
                    let xs = Tensor::new(&[c, len], permute_columns(xt.data(), p.perm(), c)).expect("shape");
                    let inputs = params.project(&xs).expect("valid projection");
                    let y = scan_chunked(&xs, &inputs, &params.a_log, &params.d_skip, chunk).expect("valid scan");
                    black_box(permute_columns(y.data(), p.inv_perm(), c));
                }
            })
        }
    }))
}

fn softmax_rows(s: &mut [f32], cols: usize, scale: f32) {
    for row in s.chunks_mut(cols) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) * scale).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// `v · pᵀ` for `v: [c × m]`, `p: [len × m]`, giving `[c × len]`.
fn mm_nt_rows(v: &[f32], p: &[f32], c: usize, m: usize) -> Vec<f32> {
    let len = p.len() / m;
    let mut out = vec![0.0; c * len];
    for (i, prow) in p.chunks(m).enumerate() {
        for ch in 0..c {
            let vr = &v[ch * m..(ch + 1) * m];
            out[ch * len + i] = vr.iter().zip(prow).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Mean of every `wh×ww` window of each channel; `[c × ph·pw]`.
fn window_pool(x: &[f32], c: usize, h: usize, w: usize, wh: usize, ww: usize) -> Vec<f32> {
    let (ph, pw) = (h.div_ceil(wh), w.div_ceil(ww));
    let mut out = vec![0.0; c * ph * pw];
    let mut count = vec![0u32; ph * pw];
    for y in 0..h {
        for xx in 0..w {
            count[(y / wh) * pw + xx / ww] += 1;
        }
    }
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let o = &mut out[ch * ph * pw..(ch + 1) * ph * pw];
        for y in 0..h {
            for xx in 0..w {
                o[(y / wh) * pw + xx / ww] += plane[y * w + xx];
            }
        }
        o.iter_mut().zip(&count).for_each(|(v, &n)| *v /= n as f32);
    }
    out
}

/// Times one kernel over every configured length.
pub fn bench_kernel(kind: KernelKind, cfg: &BenchConfig) -> Result<Vec<BenchPoint>> {
    let mut lengths = cfg.lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    lengths
        .into_iter()
        .map(|len| {
            let Some(mut job) = prepare(kind, len, cfg)? else {
                return Ok(BenchPoint { kernel: kind, len, timing: None });
            };
            for _ in 0..cfg.warmup {
                job();
            }
            let mut times: Vec<f64> = (0..cfg.reps)
                .map(|_| {
                    let t = Instant::now();
                    job();
                    t.elapsed().as_secs_f64()
                })
                .collect();
            times.sort_by(f64::total_cmp);
            Ok(BenchPoint {
                kernel: kind,
                len,
                timing: Some(Timing {
                    median_s: percentile(&times, 0.5),
                    p10_s: percentile(&times, 0.1),
                    p90_s: percentile(&times, 0.9),
                }),
            })
        })
        .collect()
}

fn fit(kind: KernelKind, points: &[BenchPoint], resolution: f64) -> SlopeFit {
    let measured: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.kernel == kind)
        .filter_map(|p| p.timing.map(|t| (p.len as f64, t.median_s)))
        .collect();
    let reliable = measured.len() >= 2 && measured.iter().all(|&(_, t)| t > 100.0 * resolution);
    let (slope, residual) = if measured.len() >= 2 {
        let x: Vec<f64> = measured.iter().map(|m| m.0.ln()).collect();
        let y: Vec<f64> = measured.iter().map(|m| m.1.ln()).collect();
        let (s, _, r) = fit_line(&x, &y);
        (s, r)
    } else {
        (f64::NAN, f64::NAN)
    };
    SlopeFit {
        kernel: kind,
        slope,
        residual,
        points: measured.len(),
        reliable,
    }
}

/// Runs every configured kernel serially inside a pool of `cfg.threads`
/// workers.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let resolution = timer_resolution().as_secs_f64();
    let points = pool.install(|| {
        cfg.kernels
            .iter()
            .map(|&k| bench_kernel(k, cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    let points: Vec<BenchPoint> = points.into_iter().flatten().collect();
    let slopes = cfg.kernels.iter().map(|&k| fit(k, &points, resolution)).collect();
    Ok(BenchResult {
        points,
        slopes,
        timer_resolution_s: resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_power_law() {
        let x: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| (3.0 * v * v).ln()).collect();
        let (s, i, r) = fit_line(&x, &y);
        assert!((s - 2.0).abs() < 1e-12);
        assert!((i - 3f64.ln()).abs() < 1e-12);
        assert!(r < 1e-12);
    }

    #[test]
    fn grids_factor_lengths() {
        assert_eq!(grid_for(1024), (32, 32));
        assert_eq!(grid_for(65536), (256, 256));
        assert_eq!(grid_for(257), (1, 257));
        assert_eq!(grid_for(24), (4, 6));
    }

    #[test]
    fn pooling_and_softmax() {
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        assert_eq!(window_pool(&x, 1, 4, 4, 2, 2), vec![2.5, 4.5, 10.5, 12.5]);
        let mut s = vec![0.0, 0.0, 1.0, 1.0];
        softmax_rows(&mut s, 2, 1.0);
        assert_eq!(s, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let short = BenchConfig { lengths: vec![64, 128, 256, 512], ..BenchConfig::default() };
        assert!(short.validate().is_err());
        let few = BenchConfig { reps: 3, ..BenchConfig::default() };
        assert!(few.validate().is_err());
    }

    #[test]
    fn skipped_points_leave_empty_fields() {
        let cfg = BenchConfig {
            kernels: vec![KernelKind::SelfAttn],
            lengths: vec![16, 32, 64, 256],
            memory_budget_bytes: 64 * 64 * 4,
            ..BenchConfig::default()
        };
        let r = run_bench(&cfg).unwrap();
        assert_eq!(r.points.len(), 4);
        assert!(r.points[3].timing.is_none());
        assert!(r.to_csv().ends_with("self_attn,256,,,\n"));
        assert_eq!(r.slope(KernelKind::SelfAttn).unwrap().points, 3);
    }
}
