//! Procedural closed-loop tracks made of quad tiles.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{TrackConfig, TrackMode};
use crate::error::{EnvError, Result};
use crate::geom::{point_in_convex_quad, Vec2};

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    /// `[left_i, right_i, right_{i+1}, left_{i+1}]`, counter-clockwise.
    pub corners: [Vec2; 4],
    pub visited: bool,
}

impl Tile {
    pub fn contains(&self, p: Vec2) -> bool {
        point_in_convex_quad(&self.corners, p)
    }

    pub fn centroid(&self) -> Vec2 {
        let c = &self.corners;
        Vec2::new(
            (c[0].x + c[1].x + c[2].x + c[3].x) / 4.0,
            (c[0].y + c[1].y + c[2].y + c[3].y) / 4.0,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub tiles: Vec<Tile>,
    /// One point per tile, tile `i` spanning `centerline[i]..centerline[i+1]`.
    pub centerline: Vec<Vec2>,
    pub half_width: f64,
    /// Axis-aligned bounds of all tile corners: `(min, max)`.
    pub bounds: (Vec2, Vec2),
    /// Longest distance from a tile centroid to one of its corners.
    pub tile_radius: f64,
}

impl Track {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn visited_count(&self) -> usize {
        self.tiles.iter().filter(|t| t.visited).count()
    }

    /// Indices of tiles containing `p`.
    pub fn tiles_at(&self, p: Vec2) -> impl Iterator<Item = usize> + '_ {
        let r = self.tile_radius;
        self.tiles.iter().enumerate().filter_map(move |(i, t)| {
            let c = t.centroid();
            ((c - p).norm() <= r && t.contains(p)).then_some(i)
        })
    }

    pub fn on_road(&self, p: Vec2) -> bool {
        self.tiles_at(p).next().is_some()
    }

    pub fn start_heading(&self) -> f64 {
        let d = self.centerline[1] - self.centerline[0];
        d.y.atan2(d.x)
    }

    /// Index of the centerline point nearest to `p`.
    pub fn nearest_index(&self, p: Vec2) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.centerline.iter().enumerate() {
            let d = (*c - p).norm_sq();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn from_centerline(centerline: Vec<Vec2>, half_width: f64) -> Self {
        let n = centerline.len();
        let normals: Vec<Vec2> = (0..n)
            .map(|i| {
                let prev = centerline[(i + n - 1) % n];
                let next = centerline[(i + 1) % n];
                (next - prev).normalized().perp()
            })
            .collect();
        let left: Vec<Vec2> = (0..n).map(|i| centerline[i] + normals[i] * half_width).collect();
        let right: Vec<Vec2> = (0..n).map(|i| centerline[i] - normals[i] * half_width).collect();
        let tiles: Vec<Tile> = (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                Tile {
                    corners: [left[i], right[i], right[j], left[j]],
                    visited: false,
                }
            })
            .collect();
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut tile_radius: f64 = 0.0;
        for t in &tiles {
            let c = t.centroid();
            for p in t.corners {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
                tile_radius = tile_radius.max((p - c).norm());
            }
        }
        Self {
            tiles,
            centerline,
            half_width,
            bounds: (lo, hi),
            tile_radius: tile_radius + 1e-9,
        }
    }

    /// Road is simple (no overlap between non-neighbouring tiles) and every
    /// tile is a proper convex quad.
    fn is_valid(&self) -> bool {
        let n = self.centerline.len();
        let seg = self.perimeter() / n as f64;
        let w = self.half_width;
        // neighbours closer than this along the loop may legitimately be near
        let skip = ((3.0 * w) / seg).ceil() as usize + 1;
        let min_gap = 2.0 * w + 1.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let along = (j - i).min(n - (j - i));
                if along > skip && (self.centerline[i] - self.centerline[j]).norm() < min_gap {
                    return false;
                }
            }
        }
        // turn radius must exceed the half width so inner edges do not fold
        for i in 0..n {
            let a = self.centerline[(i + n - 1) % n];
            let b = self.centerline[i];
            let c = self.centerline[(i + 1) % n];
            let turn = (b - a).angle_to(c - b).abs();
            if turn > 1e-9 && seg / turn < 1.2 * w {
                return false;
            }
        }
        self.tiles.iter().all(|t| crate::geom::is_convex_ccw(&t.corners))
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.centerline.len();
        (0..n)
            .map(|i| (self.centerline[(i + 1) % n] - self.centerline[i]).norm())
            .sum()
    }

    pub fn clear_visits(&mut self) {
        for t in &mut self.tiles {
            t.visited = false;
        }
    }
}

/// Deterministic track for `seed`; invalid candidates are regenerated from
/// derived seeds up to `config.max_retries` times.
pub fn generate_track(seed: u64, config: &TrackConfig) -> Result<Track> {
    if config.min_tiles < 16 {
        return Err(EnvError::Config(format!(
            "min_tiles must be >= 16, got {}",
            config.min_tiles
        )));
    }
    match config.mode {
        TrackMode::Circle { tiles } => {
            if tiles < config.min_tiles || tiles > config.max_tiles {
                return Err(EnvError::Config(format!("circle tile count {tiles} outside bounds")));
            }
            let radius = tiles as f64 * config.tile_length / TAU;
            let centerline = (0..tiles)
                .map(|i| {
                    let a = TAU * i as f64 / tiles as f64 - TAU / 4.0;
                    Vec2::new(radius * a.cos(), radius * a.sin())
                })
                .collect();
            let track = Track::from_centerline(centerline, config.road_half_width);
            if !track.is_valid() {
                return Err(EnvError::Config("circle too small for the road width".into()));
            }
            Ok(track)
        }
        TrackMode::Random {
            control_points,
            radius_min,
            radius_max,
        } => {
            let attempts = config.max_retries + 1;
            for attempt in 0..attempts {
                let derived = if attempt == 0 { seed } else { splitmix64(seed ^ attempt as u64) };
                let mut rng = ChaCha8Rng::seed_from_u64(derived);
                let track = random_candidate(&mut rng, control_points, radius_min, radius_max, config);
                if track.is_valid() {
                    return Ok(track);
                }
            }
            Err(EnvError::TrackGeneration { seed, attempts })
        }
    }
}

fn random_candidate(rng: &mut ChaCha8Rng, k: usize, rmin: f64, rmax: f64, config: &TrackConfig) -> Track {
    let step = TAU / k as f64;
    let controls: Vec<Vec2> = (0..k)
        .map(|i| {
            let a = step * i as f64 + rng.random_range(-0.3..0.3) * step;
            let r = rng.random_range(rmin..=rmax);
            Vec2::new(r * a.cos(), r * a.sin())
        })
        .collect();

    // dense closed Catmull-Rom polyline
    const SUB: usize = 40;
    let mut dense = Vec::with_capacity(k * SUB);
    for i in 0..k {
        let p0 = controls[(i + k - 1) % k];
        let p1 = controls[i];
        let p2 = controls[(i + 1) % k];
        let p3 = controls[(i + 2) % k];
        for s in 0..SUB {
            dense.push(catmull_rom(p0, p1, p2, p3, s as f64 / SUB as f64));
        }
    }
    let m = dense.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let d = (dense[(i + 1) % m] - dense[i]).norm();
        cum.push(cum[i] + d);
    }
    let total = cum[m];
    let n = ((total / config.tile_length).round() as usize).clamp(config.min_tiles, config.max_tiles);

    let mut centerline = Vec::with_capacity(n);
    let mut seg = 0;
    for t in 0..n {
        let target = total * t as f64 / n as f64;
        while cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let u = if span > 0.0 { (target - cum[seg]) / span } else { 0.0 };
        centerline.push(dense[seg].lerp(dense[(seg + 1) % m], u));
    }
    Track::from_centerline(centerline, config.road_half_width)
}

fn catmull_rom(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, t: f64) -> Vec2 {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
    };
    Vec2::new(f(p0.x, p1.x, p2.x, p3.x), f(p0.y, p1.y, p2.y, p3.y))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EnvConfig;

    #[test]
    fn circle_has_exact_tile_count_and_is_closed() {
        let cfg = EnvConfig::circle(60, 300).track;
        let t = generate_track(0, &cfg).unwrap();
        assert_eq!(t.len(), 60);
        let last = &t.tiles[59];
        assert_eq!(last.corners[2], t.tiles[0].corners[1]);
        assert_eq!(last.corners[3], t.tiles[0].corners[0]);
    }

    #[test]
    fn same_seed_same_geometry() {
        let cfg = TrackConfig::default();
        assert_eq!(generate_track(42, &cfg).unwrap(), generate_track(42, &cfg).unwrap());
        assert_ne!(generate_track(42, &cfg).unwrap(), generate_track(43, &cfg).unwrap());
    }

    #[test]
    fn rejects_tiny_tile_bounds() {
        let cfg = TrackConfig {
            min_tiles: 8,
            ..TrackConfig::default()
        };
        assert!(matches!(generate_track(1, &cfg), Err(EnvError::Config(_))));
    }

    #[test]
    fn impossible_geometry_exhausts_retries() {
        // a road wider than the whole loop can never be valid
        let cfg = TrackConfig {
            road_half_width: 200.0,
            max_retries: 3,
            ..TrackConfig::default()
        };
        assert!(matches!(
            generate_track(5, &cfg),
            Err(EnvError::TrackGeneration { attempts: 4, .. })
        ));
    }
}
