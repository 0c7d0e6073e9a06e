//! Software rasterizer for the car-centric top view.
//!
//! The camera follows the car and rotates with it: the car always points up,
//! horizontally centred, with its centre at [`CAR_ROW`]. The bottom
//! [`HUD_ROWS`] rows hold a black strip with speed and wheel bars.

use crate::car::CarState;
use crate::geom::Vec2;
use crate::track::Track;

pub const FRAME_W: usize = 96;
pub const FRAME_H: usize = 96;
pub const FRAME_BYTES: usize = FRAME_W * FRAME_H * 3;
pub const HUD_ROWS: usize = 12;
pub const VIEW_ROWS: usize = FRAME_H - HUD_ROWS;

/// Pixels per track unit.
pub const ZOOM: f64 = 2.0;
/// Screen position of the car centre, in pixel units (pixel `c` spans `c..c+1`).
pub const CAR_COL: f64 = 48.0;
pub const CAR_ROW: f64 = 60.0;
pub const CAR_LENGTH: f64 = 4.0;
pub const CAR_WIDTH: f64 = 2.0;

pub const GRASS: [u8; 3] = [190, 255, 190];
pub const ROAD: [u8; 3] = [30, 30, 30];
pub const CAR: [u8; 3] = [230, 20, 20];
pub const HUD_BG: [u8; 3] = [0, 0, 0];
pub const HUD_SPEED: [u8; 3] = [255, 255, 255];
pub const HUD_WHEEL: [u8; 3] = [0, 200, 0];

#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    data: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({FRAME_W}x{FRAME_H}x3)")
    }
}

impl Frame {
    pub fn filled(rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(FRAME_BYTES);
        for _ in 0..FRAME_W * FRAME_H {
            data.extend_from_slice(&rgb);
        }
        Self { data }
    }

    /// Row-major RGB bytes; `None` unless exactly 96×96×3.
    pub fn from_bytes(data: Vec<u8>) -> Option<Self> {
        (data.len() == FRAME_BYTES).then_some(Self { data })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * FRAME_W + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * FRAME_W + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    fn fill_rect(&mut self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, rgb: [u8; 3]) {
        for r in rows {
            for c in cols.clone() {
                self.set(r, c, rgb);
            }
        }
    }
}

/// Maps between world coordinates and the car-centric screen.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    origin: Vec2,
    fwd: Vec2,
    right: Vec2,
}

impl Camera {
    pub fn follow(car: &CarState) -> Self {
        let fwd = Vec2::from_angle(car.heading);
        Self {
            origin: car.pos(),
            fwd,
            right: Vec2::new(fwd.y, -fwd.x),
        }
    }

    /// World point under the centre of pixel `(row, col)`.
    pub fn pixel_to_world(&self, row: usize, col: usize) -> Vec2 {
        let r = (col as f64 + 0.5 - CAR_COL) / ZOOM;
        let f = (CAR_ROW - (row as f64 + 0.5)) / ZOOM;
        self.origin + self.fwd * f + self.right * r
    }

    /// Continuous screen coordinates `(row, col)` of a world point.
    pub fn world_to_screen(&self, p: Vec2) -> (f64, f64) {
        let d = p - self.origin;
        (CAR_ROW - d.dot(self.fwd) * ZOOM, CAR_COL + d.dot(self.right) * ZOOM)
    }
}

pub fn render(track: &Track, car: &CarState, max_wheel: f64) -> Frame {
    let mut frame = Frame::filled(GRASS);
    let cam = Camera::follow(car);

    let reach = {
        let fwd = CAR_ROW.max(VIEW_ROWS as f64 - CAR_ROW);
        let side = CAR_COL.max(FRAME_W as f64 - CAR_COL);
        (fwd * fwd + side * side).sqrt() / ZOOM + track.tile_radius
    };
    for tile in &track.tiles {
        if (tile.centroid() - car.pos()).norm() > reach {
            continue;
        }
        let (mut r0, mut r1, mut c0, mut c1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in tile.corners {
            let (r, c) = cam.world_to_screen(p);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        let rows = clip(r0, r1, VIEW_ROWS);
        let cols = clip(c0, c1, FRAME_W);
        for row in rows {
            for col in cols.clone() {
                if tile.contains(cam.pixel_to_world(row, col)) {
                    frame.set(row, col, ROAD);
                }
            }
        }
    }

    let half_w = CAR_WIDTH * ZOOM / 2.0;
    let half_l = CAR_LENGTH * ZOOM / 2.0;
    frame.fill_rect(
        (CAR_ROW - half_l) as usize..(CAR_ROW + half_l) as usize,
        (CAR_COL - half_w) as usize..(CAR_COL + half_w) as usize,
        CAR,
    );

    draw_hud(&mut frame, car, max_wheel);
    frame
}

/// Pixel indices whose centres may fall inside `[lo, hi]`.
fn clip(lo: f64, hi: f64, limit: usize) -> std::ops::Range<usize> {
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (hi - 0.5).floor() + 1.0;
    let b = b.min(limit as f64);
    if b <= a {
        0..0
    } else {
        a as usize..b as usize
    }
}

const BAR_ROWS: std::ops::Range<usize> = VIEW_ROWS + 4..VIEW_ROWS + 8;
const SPEED_COL: usize = 8;
const SPEED_MAX_PX: usize = 40;
/// Bar pixels per unit of speed.
const SPEED_SCALE: f64 = 20.0;
const WHEEL_COL: usize = 72;
const WHEEL_MAX_PX: usize = 14;

fn draw_hud(frame: &mut Frame, car: &CarState, max_wheel: f64) {
    frame.fill_rect(VIEW_ROWS..FRAME_H, 0..FRAME_W, HUD_BG);
    let speed_px = ((car.speed * SPEED_SCALE).round() as usize).min(SPEED_MAX_PX);
    frame.fill_rect(BAR_ROWS, SPEED_COL..SPEED_COL + speed_px, HUD_SPEED);
    let wheel_px = ((car.wheel.abs() / max_wheel * WHEEL_MAX_PX as f64).round() as usize).min(WHEEL_MAX_PX);
    let cols = if car.wheel >= 0.0 {
        WHEEL_COL..WHEEL_COL + wheel_px
    } else {
        WHEEL_COL - wheel_px..WHEEL_COL
    };
    frame.fill_rect(BAR_ROWS, cols, HUD_WHEEL);
}
