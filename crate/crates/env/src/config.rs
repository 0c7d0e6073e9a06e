use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EnvError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackMode {
    /// Closed Catmull-Rom loop through randomly jittered polar control points.
    Random {
        control_points: usize,
        radius_min: f64,
        radius_max: f64,
    },
    /// A plain circle with exactly `tiles` tiles.
    Circle { tiles: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub mode: TrackMode,
    pub min_tiles: usize,
    pub max_tiles: usize,
    /// Target centerline length of one tile, in track units.
    pub tile_length: f64,
    pub road_half_width: f64,
    /// Regeneration attempts with derived seeds before giving up.
    pub max_retries: u32,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            mode: TrackMode::Random {
                control_points: 12,
                radius_min: 90.0,
                radius_max: 150.0,
            },
            min_tiles: 150,
            max_tiles: 280,
            tile_length: 3.5,
            road_half_width: 6.67,
            max_retries: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    /// Speed gained per step at full throttle.
    pub accel_gain: f64,
    /// Speed lost per step at full brake.
    pub brake_gain: f64,
    /// Fraction of speed lost per step to rolling resistance.
    pub drag: f64,
    /// Extra fraction of speed lost per step while off the road.
    pub grass_drag: f64,
    pub wheelbase: f64,
    /// Wheel angle at full steering input, radians.
    pub max_wheel: f64,
    /// Maximum change of wheel angle per step, radians.
    pub wheel_rate: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            accel_gain: 0.04,
            brake_gain: 0.08,
            drag: 0.02,
            grass_drag: 0.06,
            wheelbase: 2.5,
            max_wheel: 0.45,
            wheel_rate: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub track: TrackConfig,
    pub physics: PhysicsConfig,
    /// Episode length cap.
    pub max_steps: u32,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            track: TrackConfig::default(),
            physics: PhysicsConfig::default(),
            max_steps: 1000,
            seed: 0,
        }
    }
}

impl EnvConfig {
    /// Small circular track used for quick experiments.
    pub fn circle(tiles: usize, max_steps: u32) -> Self {
        Self {
            track: TrackConfig {
                mode: TrackMode::Circle { tiles },
                min_tiles: 16,
                max_tiles: tiles.max(16),
                ..TrackConfig::default()
            },
            max_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.track;
        if t.min_tiles < 16 {
            return Err(EnvError::Config(format!("min_tiles must be >= 16, got {}", t.min_tiles)));
        }
        if t.max_tiles < t.min_tiles {
            return Err(EnvError::Config("max_tiles < min_tiles".into()));
        }
        if !(t.tile_length > 0.0 && t.road_half_width > 0.0) {
            return Err(EnvError::Config("tile_length and road_half_width must be positive".into()));
        }
        match t.mode {
            TrackMode::Circle { tiles } if tiles < t.min_tiles || tiles > t.max_tiles => {
                return Err(EnvError::Config(format!(
                    "circle tile count {tiles} outside [{}, {}]",
                    t.min_tiles, t.max_tiles
                )));
            }
            TrackMode::Random {
                control_points,
                radius_min,
                radius_max,
            } if control_points < 4 || !(radius_min > 0.0 && radius_max >= radius_min) => {
                return Err(EnvError::Config("bad random track parameters".into()));
            }
            _ => {}
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
