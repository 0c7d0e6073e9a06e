use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::NUM_ACTIONS;
use crate::env::RaceEnv;
use crate::geom::wrap_angle;

/// Pure-pursuit controller producing discrete actions, used to stand in for a
/// human driver when recording demonstrations.
#[derive(Clone, Debug)]
pub struct ScriptedDriver {
    /// Tiles ahead of the nearest centerline point to aim at.
    pub lookahead: usize,
    pub target_speed: f64,
    /// Probability of replacing the chosen action with a uniform random one.
    pub epsilon: f64,
    rng: ChaCha8Rng,
}

impl ScriptedDriver {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            lookahead: 3,
            target_speed: 1.2,
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn act(&mut self, env: &RaceEnv) -> usize {
        if self.epsilon > 0.0 && self.rng.random_bool(self.epsilon.min(1.0)) {
            return self.rng.random_range(0..NUM_ACTIONS);
        }
        self.greedy(env)
    }

    fn greedy(&self, env: &RaceEnv) -> usize {
        let track = env.track();
        let car = env.car();
        let n = track.len();
        let i = track.nearest_index(car.pos());
        let target = track.centerline[(i + self.lookahead) % n];
        let d = target - car.pos();
        // positive = target lies to the left
        let err = wrap_angle(d.y.atan2(d.x) - car.heading);
        if car.speed < self.target_speed * 0.4 && err.abs() < 1.0 {
            // steering only bites once the car is rolling
            return 5;
        }
        match err {
            e if e > 0.25 => 1,
            e if e > 0.08 => 2,
            e if e < -0.25 => 3,
            e if e < -0.08 => 4,
            _ if car.speed < self.target_speed => 5,
            _ if car.speed > self.target_speed * 1.5 => 10,
            _ => 0,
        }
    }
}
