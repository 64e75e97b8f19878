//! Flat `key = value` run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{GpsConfig, GpsMappingConfig, PlanarConfig};
use crate::encoder::{EncoderConfig, EncoderKind, SoftmaxKind};
use crate::training::{LossKind, TrainConfig};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: {msg}")]
    Value { key: String, msg: String },
}

/// Keys left out of the config hash: file locations and settings that only
/// affect the baselines, so neither can invalidate a trained checkpoint.
const UNHASHED_KEYS: &[&str] = &[
    "data_dir",
    "run_dir",
    "nodes_file",
    "edges_file",
    "paths_file",
    "embeddings_file",
    "reweight_alpha",
    "bilinear_epochs",
    "bilinear_lr",
];

/// Every accepted key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    // files
    ("data_dir", "data"),
    ("run_dir", "run"),
    ("nodes_file", ""),
    ("edges_file", ""),
    ("paths_file", ""),
    ("embeddings_file", ""),
    // datasets
    ("dataset", "planar"),
    ("train_fraction", "0.7"),
    ("valid_fraction", "0.1"),
    ("n_points", "500"),
    ("knn", "10"),
    ("n_trajectories", "400"),
    ("observations_per_traj", "4"),
    ("horizon", "3"),
    ("subsample_every", "3"),
    ("grid_size", "15"),
    ("spacing", "100"),
    ("jitter", "20"),
    ("removal_fraction", "0.15"),
    ("gps_noise", "15"),
    ("straight_bias", "0.6"),
    ("k_nearest", "5"),
    ("min_separation", "50"),
    // encoder
    ("gcn_layers", "3"),
    ("gcn_dim", "8"),
    ("mlp_hidden", "32,32"),
    ("num_observations", "5"),
    ("encoder_kind", "learned_gcn"),
    ("diffusion_steps", "3"),
    ("softmax_kind", "true_softmax"),
    // training
    ("loss_kind", "target_ce"),
    ("epochs", "20"),
    ("batch_size", "8"),
    ("lr", "0.001"),
    ("patience", "0"),
    // evaluation
    ("reweight_alpha", "1.0"),
    ("bilinear_epochs", "50"),
    ("bilinear_lr", "0.01"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect(),
            base: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if !config.values.contains_key(key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.to_string() });
            }
            config.values.insert(key.to_string(), value.to_string());
        }
        config.validate()?;
        Ok(config)
    }

    /// Resolves relative paths against `base` from now on.
    pub fn with_base(mut self, base: &Path) -> Self {
        self.base = base.to_path_buf();
        self
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => *slot = value.to_string(),
            None => return Err(ConfigError::Value { key: key.to_string(), msg: "unknown key".into() }),
        }
        self.validate()
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no config key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| ConfigError::Value { key: key.to_string(), msg: format!("`{raw}`: {e}") })
    }

    fn list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.trim().parse().map_err(|e| ConfigError::Value { key: key.to_string(), msg: format!("`{s}`: {e}") }))
            .collect()
    }

    /// `None` for an empty path value.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| self.base.join(raw))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.path("data_dir").unwrap_or_else(|| self.base.clone())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.path("run_dir").unwrap_or_else(|| self.base.clone())
    }

    /// Every key, sorted, one `key = value` per line.
    pub fn resolved_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over the resolved lines of every hashed key.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if !UNHASHED_KEYS.contains(&k.as_str()) {
                h.update(format!("{k} = {v}\n"));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.encoder()?.validate().map_err(|e| ConfigError::Value { key: "encoder".into(), msg: e.to_string() })?;
        self.train()?.validate().map_err(|e| ConfigError::Value { key: "training".into(), msg: e.to_string() })?;
        self.dataset()?;
        let (tf, vf): (f64, f64) = (self.get("train_fraction")?, self.get("valid_fraction")?);
        if !(tf > 0.0 && vf >= 0.0 && tf + vf <= 1.0) {
            return Err(ConfigError::Value { key: "train_fraction".into(), msg: "fractions must be positive and sum to at most 1".into() });
        }
        for key in ["reweight_alpha", "bilinear_lr"] {
            if !(self.get::<f64>(key)? > 0.0) {
                return Err(ConfigError::Value { key: key.into(), msg: "must be positive".into() });
            }
        }
        self.get::<usize>("bilinear_epochs")?;
        self.planar()?;
        self.gps()?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.get("seed")
    }

    pub fn dataset(&self) -> Result<Dataset, ConfigError> {
        self.get("dataset")
    }

    pub fn encoder(&self) -> Result<EncoderConfig, ConfigError> {
        Ok(EncoderConfig {
            gcn_layers: self.get("gcn_layers")?,
            gcn_dim: self.get("gcn_dim")?,
            mlp_hidden: self.list("mlp_hidden")?,
            num_observations: self.get("num_observations")?,
            encoder_kind: self.get::<EncoderKind>("encoder_kind")?,
            diffusion_steps: self.get("diffusion_steps")?,
            softmax_kind: self.get::<SoftmaxKind>("softmax_kind")?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            loss_kind: self.get::<LossKind>("loss_kind")?,
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            lr: self.get("lr")?,
            seed: self.seed()?,
            patience: self.get("patience")?,
            encoder: self.encoder()?,
        })
    }

    pub fn planar(&self) -> Result<PlanarConfig, ConfigError> {
        Ok(PlanarConfig {
            n_points: self.get("n_points")?,
            knn: self.get("knn")?,
            n_trajectories: self.get("n_trajectories")?,
            observations_per_traj: self.get("observations_per_traj")?,
            horizon: self.get("horizon")?,
            subsample_every: self.get("subsample_every")?,
            seed: self.seed()?,
        })
    }

    pub fn gps(&self) -> Result<GpsConfig, ConfigError> {
        Ok(GpsConfig {
            grid_size: self.get("grid_size")?,
            spacing: self.get("spacing")?,
            jitter: self.get("jitter")?,
            removal_fraction: self.get("removal_fraction")?,
            n_trajectories: self.get("n_trajectories")?,
            observations_per_traj: self.get("observations_per_traj")?,
            horizon: self.get("horizon")?,
            gps_noise: self.get("gps_noise")?,
            straight_bias: self.get("straight_bias")?,
            seed: self.seed()?,
            mapping: GpsMappingConfig { k_nearest: self.get("k_nearest")?, min_separation: self.get("min_separation")? },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dataset {
    Planar,
    Gps,
    Navigation,
}

crate::encoder::keyword_enum!(Dataset { "planar" => Dataset::Planar, "gps" => Dataset::Gps, "navigation" => Dataset::Navigation });
