use std::path::{Path, PathBuf};

use daif_env::EnvConfig;
use serde::{Deserialize, Serialize};

use crate::daif::DaifConfig;
use crate::dqn::DqnConfig;
use crate::error::{CoreError, Result};
use crate::vae::VaeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Daif,
    Dqn,
    Random,
}

impl std::str::FromStr for AgentKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daif" => Ok(Self::Daif),
            "dqn" => Ok(Self::Dqn),
            "random" => Ok(Self::Random),
            other => Err(CoreError::Config(format!("unknown agent `{other}` (daif | dqn | random)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    /// Fraction of stacks (taken from the end of the recording) held out for evaluation.
    pub holdout: f32,
    /// Stop as soon as held-out BCE has fallen by this fraction of its initial value.
    pub stop_at_drop: Option<f32>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 32,
            lr: 5e-6,
            holdout: 0.1,
            stop_at_drop: None,
        }
    }
}

/// Everything a run needs; serialized as JSON with every field defaulted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: u64,
    /// Episode length cap; overrides `env.max_steps`.
    pub max_steps: u32,
    pub agent: AgentKind,
    pub env: EnvConfig,
    pub vae: VaeConfig,
    pub daif: DaifConfig,
    pub dqn: DqnConfig,
    pub pretrain: PretrainConfig,
    pub out_dir: PathBuf,
    /// Frozen VAE weights; required for dAIF training.
    pub vae_checkpoint: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Write elapsed milliseconds to the metrics CSV; `false` writes 0 so
    /// reruns produce byte-identical files.
    pub record_wall_time: bool,
    /// Write the per-update loss breakdown every this many updates (0 = never).
    pub loss_log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 1000,
            max_steps: 1000,
            agent: AgentKind::Daif,
            env: EnvConfig::default(),
            vae: VaeConfig::default(),
            daif: DaifConfig::default(),
            dqn: DqnConfig::default(),
            pretrain: PretrainConfig::default(),
            out_dir: PathBuf::from("runs"),
            vae_checkpoint: None,
            checkpoint_every: 50,
            record_wall_time: true,
            loss_log_every: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.max_steps == 0 {
            return Err(CoreError::Config("episodes and max_steps must be positive".into()));
        }
        self.env.validate()?;
        self.daif.validate()?;
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        let mut e = self.env.clone();
        e.max_steps = self.max_steps;
        e
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// The small circular-track setup used for quick comparisons: 60 tiles,
    /// 300-step episodes, narrow networks, small batches.
    pub fn desk(agent: AgentKind, seed: u64) -> Self {
        Self {
            seed,
            episodes: 200,
            max_steps: 300,
            agent,
            env: EnvConfig::circle(60, 300),
            vae: VaeConfig {
                latent: 32,
                channels: [16, 32, 64, 128],
                enc_hidden: 64,
                dec_hidden: 64,
                final_relu: false,
            },
            daif: DaifConfig {
                hidden: 64,
                capacity: 20_000,
                batch: 32,
                learn_every: 2,
                vae_loss_samples: 0,
                lr_value: 1e-3,
                ..DaifConfig::default()
            },
            dqn: DqnConfig {
                channels: [16, 32, 64],
                hidden: 128,
                capacity: 20_000,
                batch: 32,
                learn_every: 4,
                lr: 1e-4,
                ..DqnConfig::default()
            },
            pretrain: PretrainConfig {
                epochs: 20,
                batch: 32,
                lr: 1e-3,
                holdout: 0.1,
                stop_at_drop: Some(0.4),
            },
            record_wall_time: false,
            loss_log_every: 0,
            ..Self::default()
        }
    }
}
