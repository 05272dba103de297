//! Synthetic target motion used for datasets and hidden ground truth.
//!
//! Each draw perturbs nominal waypoints with Gaussian noise and traverses the
//! resulting route at a jittered constant speed, either along straight
//! segments or along a Catmull-Rom spline through the waypoints.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{dist, lerp, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel {
    Static {
        position: Point,
    },
    PiecewiseLinear {
        waypoints: Vec<Point>,
        speed: f64,
        #[serde(default)]
        speed_noise: f64,
        #[serde(default)]
        waypoint_noise: f64,
        #[serde(default)]
        position_noise: f64,
    },
    Smooth {
        waypoints: Vec<Point>,
        speed: f64,
        #[serde(default)]
        speed_noise: f64,
        #[serde(default)]
        waypoint_noise: f64,
        #[serde(default)]
        position_noise: f64,
    },
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    if sd <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("finite std").sample(rng)
}

fn catmull_rom(pts: &[Point], per_segment: usize) -> Vec<Point> {
    if pts.len() < 2 {
        return pts.to_vec();
    }
    let get = |i: isize| pts[i.clamp(0, pts.len() as isize - 1) as usize];
    let mut out = Vec::with_capacity(pts.len() * per_segment);
    for i in 0..pts.len() - 1 {
        let (p0, p1, p2, p3) = (get(i as isize - 1), get(i as isize), get(i as isize + 1), get(i as isize + 2));
        for k in 0..per_segment {
            let t = k as f64 / per_segment as f64;
            let (t2, t3) = (t * t, t * t * t);
            let c = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push([c(p0[0], p1[0], p2[0], p3[0]), c(p0[1], p1[1], p2[1], p3[1])]);
        }
    }
    out.push(*pts.last().unwrap());
    out
}

/// Position after travelling `s` meters along the polyline.
fn along(route: &[Point], cumulative: &[f64], s: f64) -> Point {
    let total = *cumulative.last().unwrap();
    if s >= total {
        return *route.last().unwrap();
    }
    let k = cumulative.partition_point(|&c| c <= s).saturating_sub(1);
    let seg = cumulative[k + 1] - cumulative[k];
    if seg <= 0.0 {
        return route[k];
    }
    lerp(route[k], route[k + 1], (s - cumulative[k]) / seg)
}

impl MotionModel {
    /// Draws one trajectory of `len` samples spaced `dt` seconds apart.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, len: usize, dt: f64) -> Vec<Point> {
        match self {
            MotionModel::Static { position } => vec![*position; len],
            MotionModel::PiecewiseLinear {
                waypoints,
                speed,
                speed_noise,
                waypoint_noise,
                position_noise,
            }
            | MotionModel::Smooth {
                waypoints,
                speed,
                speed_noise,
                waypoint_noise,
                position_noise,
            } => {
                let noisy: Vec<Point> = waypoints
                    .iter()
                    .map(|w| [w[0] + gauss(rng, *waypoint_noise), w[1] + gauss(rng, *waypoint_noise)])
                    .collect();
                let route = if matches!(self, MotionModel::Smooth { .. }) {
                    catmull_rom(&noisy, 24)
                } else {
                    noisy
                };
                let mut cumulative = vec![0.0];
                for w in route.windows(2) {
                    cumulative.push(cumulative.last().unwrap() + dist(w[0], w[1]));
                }
                let v = (speed * (1.0 + gauss(rng, *speed_noise))).max(0.1 * speed);
                (0..len)
                    .map(|k| {
                        let p = along(&route, &cumulative, v * dt * k as f64);
                        [p[0] + gauss(rng, *position_noise), p[1] + gauss(rng, *position_noise)]
                    })
                    .collect()
            }
        }
    }

    /// Nominal top speed, used for sanity checks on scenarios.
    pub fn nominal_speed(&self) -> f64 {
        match self {
            MotionModel::Static { .. } => 0.0,
            MotionModel::PiecewiseLinear { speed, .. } | MotionModel::Smooth { speed, .. } => *speed,
        }
    }
}
