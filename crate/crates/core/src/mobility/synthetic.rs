//! Closed-route synthetic mobility, used when no recorded traces are given.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::Trace;
use crate::error::TraceError;
use crate::model::Position;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RouteShape {
    /// A circle of the given perimeter centred on the origin. Every device
    /// drives the same loop.
    Loop { perimeter_m: f64 },
    /// A square street grid with `blocks` blocks per side. Each device drives
    /// out and back along one randomly chosen street.
    Grid { blocks: u32, block_m: f64 },
}

/// A closed path parametrised by arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Route {
    Circle {
        radius: f64,
    },
    /// Out-and-back along a straight street from `start` heading along `dir`.
    Street {
        start: Position,
        dir: (f64, f64),
        length: f64,
    },
}

impl Route {
    pub fn length(&self) -> f64 {
        match *self {
            Route::Circle { radius } => 2.0 * PI * radius,
            Route::Street { length, .. } => 2.0 * length,
        }
    }

    pub fn point_at(&self, s: f64) -> Position {
        let s = s.rem_euclid(self.length());
        match *self {
            Route::Circle { radius } => {
                let a = s / radius;
                Position::new(radius * a.cos(), radius * a.sin())
            }
            Route::Street { start, dir, length } => {
                let along = if s <= length { s } else { 2.0 * length - s };
                Position::new(start.x + dir.0 * along, start.y + dir.1 * along)
            }
        }
    }
}

impl RouteShape {
    fn validate(&self) -> Result<(), TraceError> {
        match *self {
            RouteShape::Loop { perimeter_m } if perimeter_m.is_nan() || perimeter_m <= 0.0 => Err(TraceError::BadSpec(
                format!("loop perimeter must be > 0, got {perimeter_m}"),
            )),
            RouteShape::Grid { blocks, block_m } if blocks == 0 || block_m.is_nan() || block_m <= 0.0 => {
                Err(TraceError::BadSpec(format!(
                    "grid needs blocks >= 1 and block_m > 0, got {blocks} x {block_m}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn side(blocks: u32, block_m: f64) -> f64 {
        blocks as f64 * block_m
    }

    fn pick_route(&self, rng: &mut impl Rng) -> Route {
        match *self {
            RouteShape::Loop { perimeter_m } => Route::Circle {
                radius: perimeter_m / (2.0 * PI),
            },
            RouteShape::Grid { blocks, block_m } => {
                let side = Self::side(blocks, block_m);
                let street = rng.gen_range(0..=blocks) as f64 * block_m;
                if rng.gen_bool(0.5) {
                    Route::Street {
                        start: Position::new(0.0, street),
                        dir: (1.0, 0.0),
                        length: side,
                    }
                } else {
                    Route::Street {
                        start: Position::new(street, 0.0),
                        dir: (0.0, 1.0),
                        length: side,
                    }
                }
            }
        }
    }

    /// RSU sites for this shape: evenly spaced on a loop, distinct random
    /// intersections on a grid.
    pub fn rsu_sites(&self, count: usize, seed: u64) -> Result<Vec<Position>, TraceError> {
        self.validate()?;
        match *self {
            RouteShape::Loop { perimeter_m } => {
                let route = Route::Circle {
                    radius: perimeter_m / (2.0 * PI),
                };
                Ok((0..count)
                    .map(|k| route.point_at(k as f64 * perimeter_m / count as f64))
                    .collect())
            }
            RouteShape::Grid { blocks, block_m } => {
                let per_side = blocks as usize + 1;
                let total = per_side * per_side;
                if count > total {
                    return Err(TraceError::BadSpec(format!(
                        "{count} RSUs requested but the grid has only {total} intersections"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picked = sample(&mut rng, total, count).into_vec();
                picked.sort_unstable();
                Ok(picked
                    .into_iter()
                    .map(|k| Position::new((k % per_side) as f64 * block_m, (k / per_side) as f64 * block_m))
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTraceSpec {
    pub n_devices: usize,
    pub shape: RouteShape,
    pub speed_mps: f64,
    pub duration: u64,
    pub step_seconds: f64,
    pub seed: u64,
}

/// One trace per device, sampled at every step in `0..duration`. Devices
/// move at constant speed from a seeded random phase along their route.
pub fn generate_synthetic_traces(spec: &SyntheticTraceSpec) -> Result<Vec<Trace>, TraceError> {
    Ok(synthetic_routes(spec)?
        .into_iter()
        .enumerate()
        .map(|(id, (route, phase))| {
            let samples = (0..spec.duration)
                .map(|t| (t, route.point_at(phase + spec.speed_mps * spec.step_seconds * t as f64)))
                .collect();
            Trace::new(id, samples).expect("synthetic samples are well formed")
        })
        .collect())
}

/// The route and starting arc-length offset of every device.
pub fn synthetic_routes(spec: &SyntheticTraceSpec) -> Result<Vec<(Route, f64)>, TraceError> {
    if spec.n_devices == 0 {
        return Err(TraceError::BadSpec("n_devices must be >= 1".into()));
    }
    if spec.duration == 0 {
        return Err(TraceError::BadSpec("duration must be >= 1".into()));
    }
    if spec.speed_mps.is_nan() || spec.speed_mps <= 0.0 {
        return Err(TraceError::BadSpec(format!(
            "speed must be > 0, got {}",
            spec.speed_mps
        )));
    }
    if spec.step_seconds.is_nan() || spec.step_seconds <= 0.0 {
        return Err(TraceError::BadSpec(format!(
            "step_seconds must be > 0, got {}",
            spec.step_seconds
        )));
    }
    spec.shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_devices)
        .map(|_| {
            let route = spec.shape.pick_route(&mut rng);
            let phase = rng.gen_range(0.0..route.length());
            (route, phase)
        })
        .collect())
}
