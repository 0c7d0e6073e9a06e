use serde::{Deserialize, Serialize};

use crate::action::decode_action;
use crate::car::CarState;
use crate::config::EnvConfig;
use crate::error::{EnvError, Result};
use crate::geom::Vec2;
use crate::render::{render, Frame};
use crate::track::{generate_track, Track};

pub const TILE_REWARD_TOTAL: f64 = 1000.0;
pub const STEP_PENALTY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step_index: u32,
    pub tiles_visited: usize,
    pub tiles_total: usize,
    pub on_road: bool,
    pub out_of_bounds: bool,
    pub speed: f64,
    /// Sum of tile rewards granted so far this episode (excludes the step penalty).
    pub tile_reward: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub frame: Frame,
    pub reward: f32,
    pub done: bool,
    pub info: StepInfo,
}

/// Reward, termination and bookkeeping of one step, without the frame.
#[derive(Clone, Debug)]
pub struct Transition {
    pub reward: f32,
    pub done: bool,
    pub info: StepInfo,
}

/// Single-threaded car-racing episode runner.
///
/// The start tile is marked visited at reset; its share of the tile reward
/// is paid out on the step that completes the lap, so the tile rewards of a
/// full lap sum to exactly 1000.
#[derive(Clone, Debug)]
pub struct RaceEnv {
    config: EnvConfig,
    track: Track,
    car: CarState,
    step_index: u32,
    done: bool,
    tile_reward: f64,
    episode_reward: f64,
    playfield: (Vec2, f64),
}

impl RaceEnv {
    /// Builds the environment and its first track from `config.seed`.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let track = generate_track(config.seed, &config.track)?;
        let mut env = Self {
            car: CarState::at(Vec2::default(), 0.0),
            playfield: playfield(&track),
            track,
            config,
            step_index: 0,
            done: false,
            tile_reward: 0.0,
            episode_reward: 0.0,
        };
        env.place_car();
        Ok(env)
    }

    pub fn reset(&mut self, seed: u64) -> Result<Frame> {
        self.track = generate_track(seed, &self.config.track)?;
        self.playfield = playfield(&self.track);
        self.place_car();
        Ok(self.render())
    }

    fn place_car(&mut self) {
        self.track.clear_visits();
        self.track.tiles[0].visited = true;
        let c = &self.track.centerline;
        self.car = CarState::at(c[0].lerp(c[1], 0.5), self.track.start_heading());
        self.step_index = 0;
        self.done = false;
        self.tile_reward = 0.0;
        self.episode_reward = 0.0;
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let t = self.advance(action)?;
        Ok(StepResult {
            frame: self.render(),
            reward: t.reward,
            done: t.done,
            info: t.info,
        })
    }

    /// Same dynamics as [`step`](Self::step) but skips rasterization.
    pub fn advance(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let control = decode_action(action)?;
        let on_road = self.track.on_road(self.car.pos());
        self.car.advance(control, on_road, &self.config.physics);
        self.step_index += 1;

        let n = self.track.len();
        let hits: Vec<usize> = self.track.tiles_at(self.car.pos()).collect();
        let mut newly = 0usize;
        for i in hits {
            if !self.track.tiles[i].visited {
                self.track.tiles[i].visited = true;
                newly += 1;
            }
        }
        let visited = self.track.visited_count();
        let lap_done = visited == n;
        if lap_done && newly > 0 {
            newly += 1; // deferred start tile
        }
        let tile_reward = newly as f64 * TILE_REWARD_TOTAL / n as f64;
        self.tile_reward += tile_reward;
        let reward = (tile_reward - STEP_PENALTY) as f32;
        self.episode_reward += reward as f64;

        let out_of_bounds = self.out_of_bounds();
        self.done = lap_done || out_of_bounds || self.step_index >= self.config.max_steps;
        Ok(Transition {
            reward,
            done: self.done,
            info: self.info_with(out_of_bounds),
        })
    }

    pub fn render(&self) -> Frame {
        render(&self.track, &self.car, self.config.physics.max_wheel)
    }

    fn out_of_bounds(&self) -> bool {
        let (c, half) = self.playfield;
        let p = self.car.pos();
        (p.x - c.x).abs() > half || (p.y - c.y).abs() > half
    }

    fn info_with(&self, out_of_bounds: bool) -> StepInfo {
        StepInfo {
            step_index: self.step_index,
            tiles_visited: self.track.visited_count(),
            tiles_total: self.track.len(),
            on_road: self.track.on_road(self.car.pos()),
            out_of_bounds,
            speed: self.car.speed,
            tile_reward: self.tile_reward,
        }
    }

    pub fn info(&self) -> StepInfo {
        self.info_with(self.out_of_bounds())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn car(&self) -> &CarState {
        &self.car
    }

    /// Teleports the car; intended for tests and scripted scenarios.
    pub fn set_car(&mut self, car: CarState) {
        self.car = car;
    }

    pub fn step_index(&self) -> u32 {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Sum of rewards returned since the last reset.
    pub fn episode_reward(&self) -> f64 {
        self.episode_reward
    }
}

/// Centre and half-side of the square playfield: twice the track's bounding box.
fn playfield(track: &Track) -> (Vec2, f64) {
    let (lo, hi) = track.bounds;
    let centre = lo.lerp(hi, 0.5);
    let half = (hi.x - lo.x).max(hi.y - lo.y);
    (centre, half)
}
