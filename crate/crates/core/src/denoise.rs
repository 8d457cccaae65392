//! Sliding-window inference with uniform averaging of overlapping tiles.

use rayon::prelude::*;

use crate::model::HsdmModel;
use crate::noise::HsiCube;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileConfig {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { tile: 64, overlap: 8 }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.overlap >= self.tile {
            return Err(Error::Config(format!(
                "tile must be positive and larger than overlap (tile {}, overlap {})",
                self.tile, self.overlap
            )));
        }
        Ok(())
    }
}

/// Tile origins along one axis of length `dim`. Tiles step by
/// `tile − overlap`; the last one is aligned to the far edge. An axis no
/// longer than `tile` is covered by one tile starting at 0.
pub fn tile_starts(dim: usize, cfg: &TileConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if dim <= cfg.tile {
        return Ok(vec![0]);
    }
    let stride = cfg.tile - cfg.overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + cfg.tile < dim).collect();
    starts.push(dim - cfg.tile);
    Ok(starts)
}

/// Denoises `cube` tile by tile. Tiles run in parallel; their outputs are
/// accumulated in a fixed order, so results do not depend on scheduling.
pub fn denoise_cube(model: &HsdmModel<f32>, cube: &HsiCube, cfg: &TileConfig) -> Result<HsiCube> {
    let (b, h, w) = (cube.bands(), cube.height(), cube.width());
    if b != model.config().bands {
        return Err(Error::shape("denoise", &cube.dims(), &[model.config().bands, h, w]));
    }
    let ys = tile_starts(h, cfg)?;
    let xs = tile_starts(w, cfg)?;
    let (th, tw) = (h.min(cfg.tile), w.min(cfg.tile));
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();

    let outputs = origins
        .par_iter()
        .map(|&(y0, x0)| {
            let tile = cube.crop(y0, x0, th, tw)?;
            model.forward(&tile.to_tensor())
        })
        .collect::<Result<Vec<_>>>()?;

    // f64 sums of at most four f32 copies are exact, so averaging identical
    // predictions returns them unchanged.
    let mut sum = vec![0.0f64; b * h * w];
    let mut count = vec![0u32; h * w];
    for (&(y0, x0), out) in origins.iter().zip(&outputs) {
        let od = out.data();
        for band in 0..b {
            for y in 0..th {
                let dst = band * h * w + (y0 + y) * w + x0;
                let src = band * th * tw + y * tw;
                for x in 0..tw {
                    sum[dst + x] += od[src + x] as f64;
                }
            }
        }
        for y in 0..th {
            count[(y0 + y) * w + x0..(y0 + y) * w + x0 + tw].iter_mut().for_each(|c| *c += 1);
        }
    }
    let plane = h * w;
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / count[i % plane] as f64) as f32)
        .collect();
    HsiCube::new(b, h, w, data)
}
