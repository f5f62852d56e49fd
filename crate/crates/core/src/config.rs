//! TOML run configuration, checkpoint loading and the seed override.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tensorgrad::{checkpoint, ParamStore};

use crate::cube::{DispersionSpec, NoiseSpec};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::synth::SyntheticSceneSpec;
use crate::train::TrajectoryLossConfig;
use crate::unfold::{UnfoldConfig, UnfoldModel};

/// Environment variable that replaces the configured seed when set.
pub const SEED_ENV: &str = "CASSI_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub augment: bool,
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Validate every this many epochs (the last epoch always validates).
    pub val_every: usize,
    pub mask_density: f64,
    pub mask_seed: u64,
    pub dispersion_step: usize,
    pub noise_sigma: f64,
    /// Run batch items and validation scenes one after another.
    pub sequential: bool,
    pub dataset: SyntheticSceneSpec,
    pub loss: TrajectoryLossConfig,
    pub model: UnfoldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 50,
            batch_size: 4,
            patch_size: 48,
            lr: 4e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.0,
            augment: true,
            train_scenes: 200,
            val_scenes: 20,
            val_every: 1,
            mask_density: 0.5,
            mask_seed: 1,
            dispersion_step: 1,
            noise_sigma: 0.0,
            sequential: false,
            dataset: SyntheticSceneSpec::default(),
            loss: TrajectoryLossConfig::default(),
            model: UnfoldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.patch_size == 0 {
            return bad("epochs, batch_size and patch_size must be positive");
        }
        if self.train_scenes == 0 || self.val_scenes == 0 {
            return bad("need at least one training and one validation scene");
        }
        if !(self.lr > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return bad("learning rates must satisfy 0 <= lr_min <= lr, lr > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.noise_sigma >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("noise_sigma and grad_clip must be >= 0");
        }
        if self.patch_size > self.dataset.height || self.patch_size > self.dataset.width {
            return bad("patch_size exceeds the scene size");
        }
        self.dispersion()?;
        self.dataset.validate()?;
        self.loss.validate()?;
        self.model.validate()
    }

    pub fn dispersion(&self) -> Result<DispersionSpec> {
        DispersionSpec::new(self.dispersion_step)
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::Auto
        }
    }

    pub fn noise(&self, stream: u64) -> NoiseSpec {
        if self.noise_sigma > 0.0 {
            NoiseSpec::Gaussian {
                sigma: self.noise_sigma,
                seed: self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream,
            }
        } else {
            NoiseSpec::None
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies the seed override from [`SEED_ENV`], if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(seed) = env_seed()? {
            self.seed = seed;
        }
        Ok(())
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Makes a multi-line string safe for a single-line `key value` entry.
pub fn escape_meta(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

pub fn unescape_meta(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// A trained model restored from a checkpoint manifest.
pub struct LoadedModel {
    pub config: TrainConfig,
    pub model: UnfoldModel,
    pub params: ParamStore<f32>,
}

pub fn load_checkpoint(manifest: &Path) -> Result<LoadedModel> {
    let loaded = checkpoint::load::<f32>(manifest)?;
    let meta = |k: &str| {
        loaded
            .meta
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks meta `{k}`")))
    };
    let config = TrainConfig::from_toml(&unescape_meta(&meta("config")?))?;
    let bands: usize = meta("bands")?
        .parse()
        .map_err(|_| Error::Format("bad `bands` meta".into()))?;
    let model = UnfoldModel::new(config.model.clone(), bands, config.seed)?;
    for (name, t) in model.params.iter() {
        match loaded.params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            _ => {
                return Err(Error::Format(format!(
                    "checkpoint missing or misshapen parameter {name}"
                )))
            }
        }
    }
    if loaded.params.len() != model.params.len() {
        return Err(Error::Format("checkpoint has unexpected parameters".into()));
    }
    Ok(LoadedModel {
        config,
        model,
        params: loaded.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn meta_escape_round_trip() {
        let s = "a = 1\n[b]\nc = \"x\\ny\"\n";
        assert!(!escape_meta(s).contains('\n'));
        assert_eq!(unescape_meta(&escape_meta(s)), s);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }
}
