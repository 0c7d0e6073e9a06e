use serde::{Deserialize, Serialize};

use crate::action::Control;
use crate::config::PhysicsConfig;
use crate::geom::{wrap_angle, Vec2};

/// Kinematic bicycle state. Heading is measured counter-clockwise from +x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub wheel: f64,
}

impl CarState {
    pub fn at(pos: Vec2, heading: f64) -> Self {
        Self {
            x: pos.x,
            y: pos.y,
            heading,
            speed: 0.0,
            wheel: 0.0,
        }
    }

    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// One simulation step. `on_road` is evaluated at the pre-step position.
    pub fn advance(&mut self, u: Control, on_road: bool, p: &PhysicsConfig) {
        let mut speed = self.speed + u.accel as f64 * p.accel_gain - u.brake as f64 * p.brake_gain;
        speed -= p.drag * speed;
        if !on_road {
            speed -= p.grass_drag * speed;
        }
        self.speed = speed.max(0.0);

        let target = u.steer as f64 * p.max_wheel;
        let delta = (target - self.wheel).clamp(-p.wheel_rate, p.wheel_rate);
        self.wheel = (self.wheel + delta).clamp(-p.max_wheel, p.max_wheel);

        // positive steer is to the right, i.e. clockwise
        self.heading = wrap_angle(self.heading - self.speed * self.wheel.tan() / p.wheelbase);
        self.x += self.speed * self.heading.cos();
        self.y += self.speed * self.heading.sin();
    }
}
