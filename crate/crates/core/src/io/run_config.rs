use std::path::Path;

use super::KeyValues;
use crate::bench::BenchConfig;
use crate::model::ModelConfig;
use crate::noise::NoiseSpec;
use crate::train::{DataConfig, TrainConfig};
use crate::{Error, Result};

/// Everything a run depends on, stored as `section.key = value` lines.
///
/// A `profile` key (`desk` or `paper`) selects the base configuration that
/// the remaining keys override.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub bench: BenchConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile `{s}`"))),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

fn range_text((lo, hi): (f64, f64)) -> String {
    format!("{lo},{hi}")
}

fn take_range(kv: &mut KeyValues, key: &str, slot: &mut (f64, f64)) -> Result<()> {
    if let Some(raw) = kv.take::<String>(key)? {
        let bad = || Error::Config(format!("invalid range `{raw}` for `{key}`, expected `lo,hi`"));
        let (lo, hi) = raw.split_once(',').ok_or_else(bad)?;
        *slot = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
    }
    Ok(())
}

/// Writes `spec` as `{prefix}key = value` entries.
pub fn write_noise_kv(spec: &NoiseSpec, kv: &mut KeyValues, prefix: &str) {
    kv.set(format!("{prefix}case"), spec.case);
    kv.set(format!("{prefix}sigma_range"), range_text(spec.sigma_range));
    kv.set(format!("{prefix}stripe_fraction_range"), range_text(spec.stripe_fraction_range));
    kv.set(format!("{prefix}impulse_range"), range_text(spec.impulse_range));
    kv.set(format!("{prefix}affected_band_fraction"), spec.affected_band_fraction);
    kv.set(format!("{prefix}stripe_amplitude"), spec.stripe_amplitude);
    kv.set(format!("{prefix}seed"), spec.seed);
}

fn read_noise(spec: &mut NoiseSpec, kv: &mut KeyValues, prefix: &str) -> Result<()> {
    kv.take_into(&format!("{prefix}case"), &mut spec.case)?;
    take_range(kv, &format!("{prefix}sigma_range"), &mut spec.sigma_range)?;
    take_range(kv, &format!("{prefix}stripe_fraction_range"), &mut spec.stripe_fraction_range)?;
    take_range(kv, &format!("{prefix}impulse_range"), &mut spec.impulse_range)?;
    kv.take_into(&format!("{prefix}affected_band_fraction"), &mut spec.affected_band_fraction)?;
    kv.take_into(&format!("{prefix}stripe_amplitude"), &mut spec.stripe_amplitude)?;
    kv.take_into(&format!("{prefix}seed"), &mut spec.seed)?;
    Ok(())
}

fn write_data(d: &DataConfig, kv: &mut KeyValues) {
    kv.set("data.cubes", d.cubes);
    kv.set("data.bands", d.bands);
    kv.set("data.height", d.height);
    kv.set("data.width", d.width);
    kv.set("data.rank", d.rank);
    kv.set("data.seed", d.seed);
    kv.set("data.val_case", d.val_case);
    write_noise_kv(&d.noise, kv, "noise.");
}

fn read_data(d: &mut DataConfig, kv: &mut KeyValues) -> Result<()> {
    kv.take_into("data.cubes", &mut d.cubes)?;
    kv.take_into("data.bands", &mut d.bands)?;
    kv.take_into("data.height", &mut d.height)?;
    kv.take_into("data.width", &mut d.width)?;
    kv.take_into("data.rank", &mut d.rank)?;
    kv.take_into("data.seed", &mut d.seed)?;
    kv.take_into("data.val_case", &mut d.val_case)?;
    read_noise(&mut d.noise, kv, "noise.")
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let (model, train) = match profile {
            Profile::Desk => (ModelConfig::desk(8), TrainConfig::desk()),
            Profile::Paper => (ModelConfig { bands: 8, ..ModelConfig::default() }, TrainConfig::default()),
        };
        Self {
            profile,
            model,
            train,
            data: DataConfig::default(),
            bench: BenchConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut cfg = Self::profile(kv.take("profile")?.unwrap_or_default());
        cfg.model.read_kv(&mut kv, "model.")?;
        cfg.train.read_kv(&mut kv, "train.")?;
        read_data(&mut cfg.data, &mut kv)?;
        cfg.bench.read_kv(&mut kv, "bench.")?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.noise.validate()?;
        self.bench.validate()?;
        if self.model.bands != self.data.bands {
            return Err(Error::Config(format!(
                "model.bands = {} but data.bands = {}",
                self.model.bands, self.data.bands
            )));
        }
        Ok(())
    }

    /// Fully resolved text: every key, so the file alone reproduces the run.
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::default();
        kv.set("profile", self.profile);
        self.model.write_kv(&mut kv, "model.");
        self.train.write_kv(&mut kv, "train.");
        write_data(&self.data, &mut kv);
        self.bench.write_kv(&mut kv, "bench.");
        kv.to_text()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
