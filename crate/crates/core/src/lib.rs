//! Agents, data pipeline and training loops for pixel-based racing.
//!
//! - [`preprocess`]: frame → 42×42 grayscale observation, 8-frame stacks.
//! - [`replay`]: uniform experience replay and frozen-target synchronisation.
//! - [`vae`], [`daif`]: the deep active inference agent.
//! - [`dqn`]: the Q-learning baseline.
//! - [`demo`]: `FEPD` demonstration files.
//! - [`trainer`]: train / evaluate / pre-train / record loops.
//! - [`session`]: the interactive websocket protocol.

pub mod config;
pub mod daif;
pub mod demo;
pub mod dqn;
mod error;
pub mod losses;
pub mod preprocess;
pub mod replay;
pub mod session;
pub mod trainer;
pub mod vae;

pub use config::{AgentKind, PretrainConfig, RunConfig};
pub use daif::{DaifAgent, DaifConfig, LossBreakdown};
pub use demo::{Demo, DemoRecord, DemoWriter};
pub use dqn::{DqnAgent, DqnConfig};
pub use error::{CoreError, Result};
pub use preprocess::{preprocess, Observation, ObservationStack};
pub use replay::{ReplayMemory, TargetSync};
pub use trainer::{evaluate, mar_update, pretrain_vae, train, Agent, EvalReport, EpisodeMetrics, PretrainReport, TrainReport};
pub use vae::{Vae, VaeConfig};
