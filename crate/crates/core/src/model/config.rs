use std::fmt;
use std::str::FromStr;

use crate::io::KeyValues;
use crate::scan_path::PathKind;
use crate::{Error, Result};

/// Which traversals each block scans along.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ScanMode {
    /// Serpentine path plus its reversal.
    #[default]
    BidCross,
    /// Serpentine path only.
    Cross,
    /// Raster path plus its reversal.
    BidSweep,
    /// Raster path only.
    Sweep,
}

impl ScanMode {
    pub const ALL: [ScanMode; 4] = [Self::BidCross, Self::Cross, Self::BidSweep, Self::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Self::BidCross => "bid-cross",
            Self::Cross => "cross",
            Self::BidSweep => "bid-sweep",
            Self::Sweep => "sweep",
        }
    }

    pub fn path_kind(self) -> PathKind {
        match self {
            Self::BidCross | Self::Cross => PathKind::Serpentine,
            Self::BidSweep | Self::Sweep => PathKind::Sweep,
        }
    }

    pub fn bidirectional(self) -> bool {
        matches!(self, Self::BidCross | Self::BidSweep)
    }
}

impl fmt::Display for ScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scan mode `{s}`")))
    }
}

/// How the scanned branches of a block are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum AggregateMode {
    /// Gated sum of the branches, `g ⊙ Σ y_j`.
    #[default]
    PerBlockPair,
    /// Normalized sum, `LN(Σ LN(y_j))`, no gate.
    Eq6Sum,
}

impl AggregateMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::PerBlockPair => "per-block-pair",
            Self::Eq6Sum => "eq6-sum",
        }
    }
}

impl fmt::Display for AggregateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::PerBlockPair, Self::Eq6Sum]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregate mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub bands: usize,
    pub num_layers: usize,
    pub blocks_per_layer: usize,
    pub hidden_dim: usize,
    pub state_dim: usize,
    pub expand_factor: usize,
    pub conv1d_kernel: usize,
    pub ca_reduction: usize,
    pub scan_mode: ScanMode,
    pub aggregate_mode: AggregateMode,
    /// Learnable scalar on each block's two residual branches.
    pub scale_residual: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bands: 31,
            num_layers: 3,
            blocks_per_layer: 4,
            hidden_dim: 48,
            state_dim: 16,
            expand_factor: 2,
            conv1d_kernel: 3,
            ca_reduction: 4,
            scan_mode: ScanMode::default(),
            aggregate_mode: AggregateMode::default(),
            scale_residual: false,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Small network that trains in minutes on one CPU core.
    pub fn desk(bands: usize) -> Self {
        Self {
            bands,
            num_layers: 1,
            blocks_per_layer: 2,
            hidden_dim: 16,
            state_dim: 8,
            ..Self::default()
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.expand_factor * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bands", self.bands),
            ("num_layers", self.num_layers),
            ("blocks_per_layer", self.blocks_per_layer),
            ("hidden_dim", self.hidden_dim),
            ("state_dim", self.state_dim),
            ("expand_factor", self.expand_factor),
            ("conv1d_kernel", self.conv1d_kernel),
            ("ca_reduction", self.ca_reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.hidden_dim % self.ca_reduction != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by ca_reduction {}",
                self.hidden_dim, self.ca_reduction
            )));
        }
        if self.conv1d_kernel % 2 == 0 {
            return Err(Error::Config(format!("conv1d_kernel must be odd, got {}", self.conv1d_kernel)));
        }
        if !(self.ln_eps > 0.0 && self.ln_eps.is_finite()) {
            return Err(Error::Config(format!("ln_eps must be positive, got {}", self.ln_eps)));
        }
        Ok(())
    }

    /// Traversals used by block `index` of a layer: family `index mod 4`,
    /// plus its reversal in bidirectional modes.
    pub fn block_paths(&self, index: usize) -> Vec<(PathKind, usize)> {
        let kind = self.scan_mode.path_kind();
        let family = index % 4;
        if self.scan_mode.bidirectional() {
            vec![(kind, family), (kind, family + 4)]
        } else {
            vec![(kind, family)]
        }
    }

    pub fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.set(format!("{prefix}bands"), self.bands);
        kv.set(format!("{prefix}num_layers"), self.num_layers);
        kv.set(format!("{prefix}blocks_per_layer"), self.blocks_per_layer);
        kv.set(format!("{prefix}hidden_dim"), self.hidden_dim);
        kv.set(format!("{prefix}state_dim"), self.state_dim);
        kv.set(format!("{prefix}expand_factor"), self.expand_factor);
        kv.set(format!("{prefix}conv1d_kernel"), self.conv1d_kernel);
        kv.set(format!("{prefix}ca_reduction"), self.ca_reduction);
        kv.set(format!("{prefix}scan_mode"), self.scan_mode);
        kv.set(format!("{prefix}aggregate_mode"), self.aggregate_mode);
        kv.set(format!("{prefix}scale_residual"), self.scale_residual);
        kv.set(format!("{prefix}ln_eps"), self.ln_eps);
    }

    /// Overwrites fields whose `prefix`-qualified keys are present in `kv`,
    /// consuming those keys.
    pub fn read_kv(&mut self, kv: &mut KeyValues, prefix: &str) -> Result<()> {
        kv.take_into(&format!("{prefix}bands"), &mut self.bands)?;
        kv.take_into(&format!("{prefix}num_layers"), &mut self.num_layers)?;
        kv.take_into(&format!("{prefix}blocks_per_layer"), &mut self.blocks_per_layer)?;
        kv.take_into(&format!("{prefix}hidden_dim"), &mut self.hidden_dim)?;
        kv.take_into(&format!("{prefix}state_dim"), &mut self.state_dim)?;
        kv.take_into(&format!("{prefix}expand_factor"), &mut self.expand_factor)?;
        kv.take_into(&format!("{prefix}conv1d_kernel"), &mut self.conv1d_kernel)?;
        kv.take_into(&format!("{prefix}ca_reduction"), &mut self.ca_reduction)?;
        kv.take_into(&format!("{prefix}scan_mode"), &mut self.scan_mode)?;
        kv.take_into(&format!("{prefix}aggregate_mode"), &mut self.aggregate_mode)?;
        kv.take_into(&format!("{prefix}scale_residual"), &mut self.scale_residual)?;
        kv.take_into(&format!("{prefix}ln_eps"), &mut self.ln_eps)?;
        Ok(())
    }
}
