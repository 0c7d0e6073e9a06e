use serde::{Deserialize, Serialize};

use crate::error::{EnvError, Result};

pub const NUM_ACTIONS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// -1 = full left, +1 = full right.
    pub steer: f32,
    pub accel: f32,
    pub brake: f32,
}

const fn c(steer: f32, accel: f32, brake: f32) -> Control {
    Control { steer, accel, brake }
}

pub const ACTIONS: [Control; NUM_ACTIONS] = [
    c(0.0, 0.0, 0.0),
    c(-1.0, 0.0, 0.0),
    c(-0.5, 0.0, 0.0),
    c(1.0, 0.0, 0.0),
    c(0.5, 0.0, 0.0),
    c(0.0, 1.0, 0.0),
    c(0.0, 0.5, 0.0),
    c(0.0, 0.25, 0.0),
    c(0.0, 0.0, 1.0),
    c(0.0, 0.0, 0.5),
    c(0.0, 0.0, 0.25),
];

pub const ACTION_NAMES: [&str; NUM_ACTIONS] = [
    "do nothing",
    "steer sharp left",
    "steer left",
    "steer sharp right",
    "steer right",
    "accelerate 100%",
    "accelerate 50%",
    "accelerate 25%",
    "brake 100%",
    "brake 50%",
    "brake 25%",
];

pub fn decode_action(index: usize) -> Result<Control> {
    ACTIONS.get(index).copied().ok_or(EnvError::InvalidAction(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        assert_eq!(decode_action(0).unwrap(), c(0.0, 0.0, 0.0));
        assert_eq!(decode_action(5).unwrap(), c(0.0, 1.0, 0.0));
        assert_eq!(decode_action(8).unwrap(), c(0.0, 0.0, 1.0));
        assert!(matches!(decode_action(11), Err(EnvError::InvalidAction(11))));
    }

    #[test]
    fn entries_are_distinct() {
        for i in 0..NUM_ACTIONS {
            for j in (i + 1)..NUM_ACTIONS {
                assert_ne!(ACTIONS[i], ACTIONS[j], "{i} vs {j}");
            }
        }
    }
}
