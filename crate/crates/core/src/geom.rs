use serde::{Deserialize, Serialize};

/// Planar position in meters.
pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn lerp(a: Point, b: Point, s: f64) -> Point {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s]
}

/// Moves `from` toward `to` by at most `step` meters.
pub fn step_toward(from: Point, to: Point, step: f64) -> Point {
    let d = dist(from, to);
    if d <= step || d == 0.0 {
        to
    } else {
        lerp(from, to, step / d)
    }
}

/// A target path sampled every `dt` seconds starting at absolute time `t0`.
/// Positions are interpolated linearly and held constant outside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPath {
    pub t0: f64,
    pub dt: f64,
    pub points: Vec<Point>,
}

impl TargetPath {
    pub fn new(t0: f64, dt: f64, points: Vec<Point>) -> Self {
        assert!(!points.is_empty(), "a path needs at least one point");
        assert!(dt > 0.0, "sample period must be positive");
        Self { t0, dt, points }
    }

    pub fn fixed(t0: f64, p: Point) -> Self {
        Self::new(t0, 1.0, vec![p])
    }

    pub fn at(&self, t: f64) -> Point {
        let s = (t - self.t0) / self.dt;
        if s <= 0.0 {
            return self.points[0];
        }
        let last = self.points.len() - 1;
        let k = s.floor() as usize;
        if k >= last {
            return self.points[last];
        }
        lerp(self.points[k], self.points[k + 1], s - k as f64)
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.dt * (self.points.len() - 1) as f64
    }
}

/// Largest speed between consecutive samples.
pub fn max_speed(points: &[Point], dt: f64) -> f64 {
    points
        .windows(2)
        .map(|w| dist(w[0], w[1]) / dt)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_interpolates_and_holds() {
        let p = TargetPath::new(10.0, 2.0, vec![[0.0, 0.0], [2.0, 0.0], [2.0, 4.0]]);
        assert_eq!(p.at(0.0), [0.0, 0.0]);
        assert_eq!(p.at(11.0), [1.0, 0.0]);
        assert_eq!(p.at(13.0), [2.0, 2.0]);
        assert_eq!(p.at(100.0), [2.0, 4.0]);
        assert_eq!(p.end_time(), 14.0);
    }

    #[test]
    fn step_toward_clamps() {
        assert_eq!(step_toward([0.0, 0.0], [3.0, 4.0], 10.0), [3.0, 4.0]);
        let q = step_toward([0.0, 0.0], [3.0, 4.0], 2.5);
        assert!((q[0] - 1.5).abs() < 1e-12 && (q[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn max_speed_of_history() {
        let pts = [[0.0, 0.0], [0.5, 0.0], [1.7, 0.0], [2.5, 0.0]];
        assert!((max_speed(&pts, 1.0) - 1.2).abs() < 1e-12);
    }
}
