//! Deterministic top-down car racing on procedurally generated tracks.
//!
//! Observations are 96×96 RGB frames from a camera that follows the car.
//! Every episode visits a fresh closed track; each newly touched tile pays
//! `1000 / N`, every step costs `0.1`, and the episode ends when the lap is
//! complete, the car leaves the playfield, or the step cap is hit.

mod action;
mod car;
pub mod config;
mod driver;
mod env;
mod error;
pub mod geom;
pub mod render;
pub mod track;

pub use action::{decode_action, Control, ACTIONS, ACTION_NAMES, NUM_ACTIONS};
pub use car::CarState;
pub use config::{EnvConfig, PhysicsConfig, TrackConfig, TrackMode};
pub use driver::ScriptedDriver;
pub use env::{RaceEnv, StepInfo, StepResult, Transition, STEP_PENALTY, TILE_REWARD_TOTAL};
pub use error::{EnvError, Result};
pub use render::Frame;
pub use track::{generate_track, Tile, Track};
