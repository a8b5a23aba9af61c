//! Server configuration: TOML file, command-line overrides, validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::Thresholds;
use crate::domain::StoreConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
    #[error("invalid {}: {detail}", fields.join(", "))]
    Invalid { fields: Vec<&'static str>, detail: String },
}

fn invalid(fields: &[&'static str], detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        fields: fields.to_vec(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub data_root: PathBuf,
    pub listen: String,
    pub lock_ttl_minutes: u64,
    pub auto_accept_threshold: f64,
    pub uncertain_low: f64,
    pub uncertain_high: f64,
    pub unpredicted_score: f64,
    pub split_ratio: f64,
    pub rng_seed: u64,
    pub trust_auto_accept: bool,
    /// Claimed jobs with no progress for this long go back to the queue.
    pub job_abandon_minutes: u64,
    /// Minimum IoU for a prediction to match ground truth.
    pub match_min_iou: f64,
    /// Built annotator UI, served at `/` when set.
    pub ui_dir: Option<PathBuf>,
    /// Seconds between expired-lease sweeps.
    pub sweep_interval_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            data_root: PathBuf::from("data"),
            listen: "127.0.0.1:8080".into(),
            lock_ttl_minutes: 30,
            auto_accept_threshold: t.auto_accept,
            uncertain_low: t.uncertain_low,
            uncertain_high: t.uncertain_high,
            unpredicted_score: t.unpredicted_score,
            split_ratio: 0.8,
            rng_seed: 0,
            trust_auto_accept: false,
            job_abandon_minutes: 60,
            match_min_iou: 0.0,
            ui_dir: None,
            sweep_interval_secs: 60,
        }
    }
}

impl ServerConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(path, &text)
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            auto_accept: self.auto_accept_threshold,
            uncertain_low: self.uncertain_low,
            uncertain_high: self.uncertain_high,
            unpredicted_score: self.unpredicted_score,
        }
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            auto_accept_threshold: self.auto_accept_threshold,
            trust_auto_accept: self.trust_auto_accept,
        }
    }

    /// Value checks that do not touch the filesystem.
    pub fn validate_values(&self) -> Result<(), ConfigError> {
        let unit = [
            ("auto_accept_threshold", self.auto_accept_threshold),
            ("uncertain_low", self.uncertain_low),
            ("uncertain_high", self.uncertain_high),
            ("unpredicted_score", self.unpredicted_score),
            ("match_min_iou", self.match_min_iou),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(&[name], format!("{v} is outside [0, 1]")));
            }
        }
        if !(self.uncertain_low < self.uncertain_high && self.uncertain_high < self.auto_accept_threshold) {
            return Err(invalid(
                &["uncertain_low", "uncertain_high", "auto_accept_threshold"],
                format!(
                    "need uncertain_low < uncertain_high < auto_accept_threshold, got {} / {} / {}",
                    self.uncertain_low, self.uncertain_high, self.auto_accept_threshold
                ),
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(invalid(&["split_ratio"], format!("{} must lie strictly between 0 and 1", self.split_ratio)));
        }
        if self.lock_ttl_minutes == 0 {
            return Err(invalid(&["lock_ttl_minutes"], "must be at least 1"));
        }
        if self.job_abandon_minutes == 0 {
            return Err(invalid(&["job_abandon_minutes"], "must be at least 1"));
        }
        if self.sweep_interval_secs == 0 {
            return Err(invalid(&["sweep_interval_secs"], "must be at least 1"));
        }
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            return Err(invalid(&["listen"], format!("`{}` is not a socket address", self.listen)));
        }
        Ok(())
    }

    /// Full validation including the data root.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_values()?;
        match fs::read_dir(&self.data_root) {
            Ok(_) => Ok(()),
            Err(e) => Err(invalid(
                &["data_root"],
                format!("{} is not a readable directory: {e}", self.data_root.display()),
            )),
        }
    }
}

/// One optional flag per config field. Flags beat the environment, which
/// beats the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigOverrides {
    #[arg(long, env = "ANNOFORGE_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub lock_ttl_minutes: Option<u64>,
    #[arg(long)]
    pub auto_accept_threshold: Option<f64>,
    #[arg(long)]
    pub uncertain_low: Option<f64>,
    #[arg(long)]
    pub uncertain_high: Option<f64>,
    #[arg(long)]
    pub unpredicted_score: Option<f64>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    #[arg(long)]
    pub trust_auto_accept: Option<bool>,
    #[arg(long)]
    pub job_abandon_minutes: Option<u64>,
    #[arg(long)]
    pub match_min_iou: Option<f64>,
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long)]
    pub sweep_interval_secs: Option<u64>,
}

impl ConfigOverrides {
    pub fn apply(self, mut c: ServerConfig) -> ServerConfig {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    c.$f = v;
                }
            )*};
        }
        set!(
            data_root,
            listen,
            lock_ttl_minutes,
            auto_accept_threshold,
            uncertain_low,
            uncertain_high,
            unpredicted_score,
            split_ratio,
            rng_seed,
            trust_auto_accept,
            job_abandon_minutes,
            match_min_iou,
            sweep_interval_secs
        );
        if let Some(dir) = self.ui_dir {
            c.ui_dir = Some(dir);
        }
        c
    }
}

/// Config file (if any) plus overrides, validated.
pub fn resolve(file: Option<&Path>, overrides: ConfigOverrides) -> Result<ServerConfig, ConfigError> {
    let base = match file {
        Some(p) => ServerConfig::load(p)?,
        None => ServerConfig::default(),
    };
    let cfg = overrides.apply(base);
    cfg.validate()?;
    Ok(cfg)
}
