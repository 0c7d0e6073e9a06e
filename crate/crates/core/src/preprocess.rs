//! Frame → observation pipeline and the observation stack.

use std::collections::VecDeque;
use std::sync::Arc;

use daif_env::render::{FRAME_BYTES, FRAME_W, HUD_ROWS};
use daif_env::Frame;

use crate::error::{CoreError, Result};

pub const OBS_SIDE: usize = 42;
pub const OBS_LEN: usize = OBS_SIDE * OBS_SIDE;
pub const N_SCREENS: usize = 8;
pub const STACK_LEN: usize = N_SCREENS * OBS_LEN;

const SIDE_CROP: usize = 6;
const CROP: usize = 84;

/// One 42×42 grayscale frame, quantized to 8 bits (`value = byte / 255`).
///
/// Cheap to clone: stacks and replay entries share the pixel buffer.
#[derive(Clone, PartialEq, Eq)]
pub struct Observation(Arc<[u8]>);

impl std::fmt::Debug for Observation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Observation(42x42)")
    }
}

impl Observation {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != OBS_LEN {
            return Err(CoreError::Argument(format!("observation needs {OBS_LEN} bytes, got {}", bytes.len())));
        }
        Ok(Self(bytes.into()))
    }

    pub fn filled(value: f32) -> Self {
        Self(vec![quantize(value); OBS_LEN].into())
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.0[row * OBS_SIDE + col] as f32 / 255.0
    }

    pub fn write_f32(&self, out: &mut [f32]) {
        for (o, &b) in out.iter_mut().zip(self.0.iter()) {
            *o = b as f32 / 255.0;
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        let mut v = vec![0.0; OBS_LEN];
        self.write_f32(&mut v);
        v
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Crops the HUD and 6 columns per side (→ 84×84), converts to BT.601 luma,
/// 2×2 average-pools to 42×42 and scales to `[0, 1]`.
pub fn preprocess(frame: &Frame) -> Observation {
    preprocess_rgb(frame.as_bytes()).expect("frames are always 96x96x3")
}

pub fn preprocess_rgb(rgb: &[u8]) -> Result<Observation> {
    if rgb.len() != FRAME_BYTES {
        return Err(CoreError::Argument(format!(
            "expected a 96x96x3 frame ({FRAME_BYTES} bytes), got {}",
            rgb.len()
        )));
    }
    debug_assert_eq!(FRAME_W - 2 * SIDE_CROP, CROP);
    debug_assert_eq!(96 - HUD_ROWS, CROP);
    let luma = |r: usize, c: usize| {
        let i = (r * FRAME_W + c + SIDE_CROP) * 3;
        0.299 * rgb[i] as f64 + 0.587 * rgb[i + 1] as f64 + 0.114 * rgb[i + 2] as f64
    };
    let mut out = Vec::with_capacity(OBS_LEN);
    for r in 0..OBS_SIDE {
        for c in 0..OBS_SIDE {
            let sum = luma(2 * r, 2 * c) + luma(2 * r, 2 * c + 1) + luma(2 * r + 1, 2 * c) + luma(2 * r + 1, 2 * c + 1);
            out.push(quantize((sum / (4.0 * 255.0)) as f32));
        }
    }
    Ok(Observation(out.into()))
}

/// The last [`N_SCREENS`] observations, index 0 oldest and index 7 newest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationStack {
    frames: VecDeque<Observation>,
}

impl ObservationStack {
    /// Episode start: the first observation repeated eight times.
    pub fn new(first: Observation) -> Self {
        Self {
            frames: std::iter::repeat_n(first, N_SCREENS).collect(),
        }
    }

    pub fn from_frames(frames: &[Observation]) -> Result<Self> {
        if frames.len() != N_SCREENS {
            return Err(CoreError::Argument(format!("stack needs {N_SCREENS} frames, got {}", frames.len())));
        }
        Ok(Self {
            frames: frames.iter().cloned().collect(),
        })
    }

    pub fn push(&mut self, obs: Observation) {
        self.frames.pop_front();
        self.frames.push_back(obs);
    }

    pub fn pushed(&self, obs: Observation) -> Self {
        let mut s = self.clone();
        s.push(obs);
        s
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Observation> {
        self.frames.iter()
    }

    pub fn newest(&self) -> &Observation {
        self.frames.back().expect("stack is never empty")
    }

    /// Writes the `(8, 42, 42)` channel-major tensor into `out`.
    pub fn write_f32(&self, out: &mut [f32]) {
        assert_eq!(out.len(), STACK_LEN);
        for (chunk, f) in out.chunks_mut(OBS_LEN).zip(&self.frames) {
            f.write_f32(chunk);
        }
    }
}

/// Concatenates stacks into a `(B, 8, 42, 42)` tensor.
pub fn stacks_to_tensor<'a>(stacks: impl ExactSizeIterator<Item = &'a ObservationStack>) -> daif_nn::Tensor {
    let b = stacks.len();
    let mut data = vec![0.0; b * STACK_LEN];
    for (chunk, s) in data.chunks_mut(STACK_LEN).zip(stacks) {
        s.write_f32(chunk);
    }
    daif_nn::Tensor::new(vec![b, N_SCREENS, OBS_SIDE, OBS_SIDE], data).expect("stack tensor shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_frames_map_to_constant_observations() {
        let black = preprocess_rgb(&vec![0u8; FRAME_BYTES]).unwrap();
        assert!(black.to_f32().iter().all(|&v| v == 0.0));
        let white = preprocess_rgb(&vec![255u8; FRAME_BYTES]).unwrap();
        assert!(white.to_f32().iter().all(|&v| v == 1.0));
        assert!(matches!(preprocess_rgb(&[0u8; 10]), Err(CoreError::Argument(_))));
    }

    #[test]
    fn hud_rows_are_cropped_away() {
        let mut rgb = vec![0u8; FRAME_BYTES];
        rgb[(90 * 96 + 48) * 3..(90 * 96 + 49) * 3].fill(255);
        rgb[(40 * 96 + 2) * 3..(40 * 96 + 3) * 3].fill(255);
        assert!(preprocess_rgb(&rgb).unwrap().to_f32().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stack_keeps_push_order() {
        let obs: Vec<Observation> = (0..9).map(|i| Observation::filled(i as f32 / 10.0)).collect();
        let mut s = ObservationStack::new(obs[0].clone());
        assert_eq!(s.len(), 8);
        assert!(s.frames().all(|f| *f == obs[0]));
        for o in &obs[1..] {
            s.push(o.clone());
        }
        let held: Vec<_> = s.frames().cloned().collect();
        assert_eq!(held, obs[1..].to_vec());
        assert_eq!(s.newest(), &obs[8]);
    }
}
