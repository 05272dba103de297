//! Target trajectory forecasting with split conformal prediction regions.
//!
//! Predictors map an observed history to positions over the next `horizon`
//! steps. Calibration scores are the Euclidean prediction errors on held-out
//! calibration trajectories; the radius for each step is the
//! `⌈(n+1)(1-δ̄)⌉`-th smallest score after appending `+∞`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::geom::{max_speed, Point, TargetPath};

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("autoregressive normal equations are singular for order {order}")]
    DegenerateFit { order: usize },
    #[error("insufficient calibration data: quantile index {index} exceeds {available} scores")]
    InsufficientCalibration { index: usize, available: usize },
    #[error("calibration trajectory {index} has {len} samples, need {needed}")]
    ShortTrajectory { index: usize, len: usize, needed: usize },
    #[error("no training trajectories for target `{0}`")]
    NoTrainingData(String),
    #[error("no observations for target `{0}`")]
    NoObservations(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the joint failure probability is split over horizon steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpCorrection {
    /// Per-step level `δ / horizon`, so the joint statement holds by a union bound.
    #[default]
    Bonferroni,
    /// Per-step level `δ`.
    None,
}

impl CpCorrection {
    pub fn step_level(self, delta: f64, horizon: usize) -> f64 {
        match self {
            CpCorrection::Bonferroni => delta / horizon.max(1) as f64,
            CpCorrection::None => delta,
        }
    }
}

/// One recorded trajectory, as stored one-per-line in dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub target: String,
    pub dt: f64,
    pub points: Vec<Point>,
}

/// Per-target trajectories split into calibration and training parts.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryDataset {
    pub dt: f64,
    pub targets: BTreeMap<String, TargetSamples>,
}

#[derive(Debug, Clone, Default)]
pub struct TargetSamples {
    pub trajectories: Vec<Vec<Point>>,
    pub calibration: Vec<usize>,
    pub training: Vec<usize>,
}

impl TargetSamples {
    pub fn calibration_set(&self) -> Vec<&[Point]> {
        self.calibration.iter().map(|&i| self.trajectories[i].as_slice()).collect()
    }

    pub fn training_set(&self) -> Vec<&[Point]> {
        self.training.iter().map(|&i| self.trajectories[i].as_slice()).collect()
    }
}

impl TrajectoryDataset {
    /// Groups records by target; the first `n_cal` of each target calibrate,
    /// the rest train.
    pub fn from_records(records: Vec<TrajectoryRecord>, n_cal: usize) -> Result<Self, PredictionError> {
        let mut out = TrajectoryDataset::default();
        for r in records {
            if out.dt == 0.0 {
                out.dt = r.dt;
            } else if (out.dt - r.dt).abs() > 1e-12 {
                return Err(PredictionError::Dataset("mixed sample periods".into()));
            }
            out.targets.entry(r.target).or_default().trajectories.push(r.points);
        }
        for (id, t) in out.targets.iter_mut() {
            let len = t.trajectories[0].len();
            if t.trajectories.iter().any(|p| p.len() != len) {
                return Err(PredictionError::Dataset(format!("unequal trajectory lengths for target {id}")));
            }
            let k = n_cal.min(t.trajectories.len());
            t.calibration = (0..k).collect();
            t.training = (k..t.trajectories.len()).collect();
        }
        Ok(out)
    }

    pub fn load_jsonl(path: impl AsRef<Path>, n_cal: usize) -> Result<Self, PredictionError> {
        let f = fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TrajectoryRecord = serde_json::from_str(&line)
                .map_err(|e| PredictionError::Dataset(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Self::from_records(records, n_cal)
    }
}

pub trait Predictor: Send + Sync {
    /// Positions for the `horizon` steps after the last history sample.
    fn predict(&self, history: &[Point], horizon: usize) -> Vec<Point>;
    fn name(&self) -> String;
}

/// Extrapolates the last observed displacement.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocity;

impl Predictor for ConstantVelocity {
    fn predict(&self, history: &[Point], horizon: usize) -> Vec<Point> {
        let last = *history.last().expect("history is nonempty");
        let v = if history.len() >= 2 {
            let prev = history[history.len() - 2];
            [last[0] - prev[0], last[1] - prev[1]]
        } else {
            [0.0, 0.0]
        };
        (1..=horizon)
            .map(|h| [last[0] + v[0] * h as f64, last[1] + v[1] * h as f64])
            .collect()
    }

    fn name(&self) -> String {
        "constant_velocity".into()
    }
}

/// Per-coordinate linear autoregression `y[k] = Σ a_i y[k-i]`, rolled out
/// recursively over the horizon.
#[derive(Debug, Clone)]
pub struct LinearAutoregressive {
    pub order: usize,
    pub coefficients: [Vec<f64>; 2],
}

impl Predictor for LinearAutoregressive {
    fn predict(&self, history: &[Point], horizon: usize) -> Vec<Point> {
        let first = history[0];
        let mut buf: Vec<Point> = Vec::with_capacity(self.order + horizon);
        for _ in history.len()..self.order {
            buf.push(first);
        }
        buf.extend(history.iter().rev().take(self.order).rev().copied());
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let n = buf.len();
            let mut next = [0.0; 2];
            for c in 0..2 {
                next[c] = (0..self.order)
                    .map(|i| self.coefficients[c][i] * buf[n - 1 - i][c])
                    .sum();
            }
            buf.push(next);
            out.push(next);
        }
        out
    }

    fn name(&self) -> String {
        format!("ar{}", self.order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    ConstantVelocity,
    LinearAutoregressive { order: usize },
}

impl std::str::FromStr for PredictorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cv" | "constant_velocity" => Ok(PredictorKind::ConstantVelocity),
            _ => s
                .strip_prefix("ar")
                .and_then(|o| o.trim_start_matches([':', '_']).parse().ok())
                .filter(|&o: &usize| o >= 1)
                .map(|order| PredictorKind::LinearAutoregressive { order })
                .ok_or_else(|| format!("unknown predictor `{s}` (expected cv or ar<order>)")),
        }
    }
}

fn fit_ar(training: &[&[Point]], order: usize) -> Result<LinearAutoregressive, PredictionError> {
    let rows: usize = training.iter().map(|t| t.len().saturating_sub(order)).sum();
    if rows < order {
        return Err(PredictionError::DegenerateFit { order });
    }
    let mut coefficients = [Vec::new(), Vec::new()];
    for c in 0..2 {
        let mut x = DMatrix::<f64>::zeros(rows, order);
        let mut y = DVector::<f64>::zeros(rows);
        let mut r = 0;
        for t in training {
            for k in order..t.len() {
                for i in 0..order {
                    x[(r, i)] = t[k - 1 - i][c];
                }
                y[r] = t[k][c];
                r += 1;
            }
        }
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * y;
        let svd = xtx.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin / smax < 1e-12 {
            return Err(PredictionError::DegenerateFit { order });
        }
        let a = svd
            .solve(&xty, 0.0)
            .map_err(|_| PredictionError::DegenerateFit { order })?;
        coefficients[c] = a.iter().copied().collect();
    }
    Ok(LinearAutoregressive { order, coefficients })
}

/// Fits a predictor on training trajectories of one target.
pub fn fit_predictor(training: &[&[Point]], kind: PredictorKind) -> Result<Box<dyn Predictor>, PredictionError> {
    match kind {
        PredictorKind::ConstantVelocity => Ok(Box::new(ConstantVelocity)),
        PredictorKind::LinearAutoregressive { order } => {
            if order == 0 {
                return Err(PredictionError::InvalidParameter("order must be positive".into()));
            }
            Ok(Box::new(fit_ar(training, order)?))
        }
    }
}

/// Like [`fit_predictor`], but falls back to constant velocity on a singular
/// fit and returns the error that caused the fallback.
pub fn fit_predictor_or_fallback(
    training: &[&[Point]],
    kind: PredictorKind,
) -> (Box<dyn Predictor>, Option<PredictionError>) {
    match fit_predictor(training, kind) {
        Ok(p) => (p, None),
        Err(e @ PredictionError::DegenerateFit { .. }) => (Box::new(ConstantVelocity), Some(e)),
        Err(e) => (Box::new(ConstantVelocity), Some(e)),
    }
}

/// Index `p = ⌈(n+1)(1-level)⌉` (1-based) into the sorted scores plus `+∞`.
pub fn quantile_index(n: usize, level: f64) -> usize {
    ((n as f64 + 1.0) * (1.0 - level) - 1e-9).ceil().max(1.0) as usize
}

/// The conformal quantile of `scores` at miscoverage `level`.
pub fn conformal_quantile(scores: &[f64], level: f64) -> Result<f64, PredictionError> {
    let p = quantile_index(scores.len(), level);
    if p > scores.len() {
        return Err(PredictionError::InsufficientCalibration {
            index: p,
            available: scores.len(),
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[p - 1])
}

/// Per-step radii for forecasts made at sample index `t` (history `0..=t`).
pub fn calibrate(
    pred: &dyn Predictor,
    cal: &[&[Point]],
    t: usize,
    horizon: usize,
    delta: f64,
    correction: CpCorrection,
) -> Result<Vec<f64>, PredictionError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PredictionError::InvalidParameter(format!("delta {delta} outside (0, 1)")));
    }
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let level = correction.step_level(delta, horizon);
    let needed = t + horizon + 1;
    let mut scores = vec![Vec::with_capacity(cal.len()); horizon];
    for (i, traj) in cal.iter().enumerate() {
        if traj.len() < needed {
            return Err(PredictionError::ShortTrajectory {
                index: i,
                len: traj.len(),
                needed,
            });
        }
        let yhat = pred.predict(&traj[..=t], horizon);
        for h in 0..horizon {
            scores[h].push(crate::geom::dist(traj[t + 1 + h], yhat[h]));
        }
    }
    scores.iter().map(|s| conformal_quantile(s, level)).collect()
}

/// Forecast for one target made at absolute time `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetForecast {
    pub id: String,
    /// Last observed position (at `t0`).
    pub origin: Point,
    /// Predicted positions at `t0 + h·dt`, `h = 1..=horizon`.
    pub yhat: Vec<Point>,
    /// Region radii matching `yhat`.
    pub radii: Vec<f64>,
    /// Largest observed speed so far.
    pub vmax: f64,
}

impl TargetForecast {
    pub fn horizon(&self) -> usize {
        self.yhat.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub t0: f64,
    pub dt: f64,
    pub delta: f64,
    pub targets: Vec<TargetForecast>,
}

impl PredictionBundle {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.targets.iter().position(|t| t.id == id)
    }

    /// Mean path of target `m`, starting at its observed position.
    pub fn mean_path(&self, m: usize) -> TargetPath {
        let f = &self.targets[m];
        let mut pts = Vec::with_capacity(f.yhat.len() + 1);
        pts.push(f.origin);
        pts.extend(f.yhat.iter().copied());
        TargetPath::new(self.t0, self.dt, pts)
    }

    pub fn mean_paths(&self) -> Vec<TargetPath> {
        (0..self.targets.len()).map(|m| self.mean_path(m)).collect()
    }

    /// Region radius for target `m` at absolute time `t`; zero at or before
    /// `t0` and held at the last step beyond the horizon.
    pub fn radius_at(&self, m: usize, t: f64) -> f64 {
        let f = &self.targets[m];
        if f.radii.is_empty() || t <= self.t0 {
            return 0.0;
        }
        let step = ((t - self.t0) / self.dt - 1e-9).ceil() as usize;
        f.radii[step.clamp(1, f.radii.len()) - 1]
    }

    /// Same bundle with every radius set to zero.
    pub fn without_uncertainty(&self) -> Self {
        let mut b = self.clone();
        for t in &mut b.targets {
            t.radii.iter_mut().for_each(|r| *r = 0.0);
        }
        b
    }

    /// Targets frozen at their last observed position, zero radii.
    pub fn frozen(&self) -> Self {
        let mut b = self.without_uncertainty();
        for t in &mut b.targets {
            let o = t.origin;
            t.yhat.iter_mut().for_each(|p| *p = o);
        }
        b
    }
}

/// Builds a bundle from observed histories sampled every `dt` seconds.
/// `observations[m]` ends with the sample at absolute time `t0`.
#[allow(clippy::too_many_arguments)]
pub fn predict_bundle(
    ids: &[String],
    preds: &[&dyn Predictor],
    observations: &[&[Point]],
    t0: f64,
    dt: f64,
    horizon: usize,
    delta: f64,
    cal: &[Vec<&[Point]>],
    correction: CpCorrection,
) -> Result<PredictionBundle, PredictionError> {
    if horizon == 0 {
        return Err(PredictionError::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut targets = Vec::with_capacity(ids.len());
    for m in 0..ids.len() {
        let obs = observations[m];
        if obs.is_empty() {
            return Err(PredictionError::NoObservations(ids[m].clone()));
        }
        let t_index = obs.len() - 1;
        let radii = calibrate(preds[m], &cal[m], t_index, horizon, delta, correction)?;
        targets.push(TargetForecast {
            id: ids[m].clone(),
            origin: *obs.last().unwrap(),
            yhat: preds[m].predict(obs, horizon),
            radii,
            vmax: max_speed(obs, dt),
        });
    }
    Ok(PredictionBundle { t0, dt, delta, targets })
}

/// Draws one trajectory per target inside the prediction regions.
///
/// Each step's point is `yhat + r·u` with `r` uniform on `[0, G]` and `u` a
/// uniform unit vector. With `smoothness > 0` the radius and angle draws are
/// correlated across steps through an AR(1) Gaussian copula, which keeps the
/// per-step marginals unchanged.
pub fn sample_trajectory(bundle: &PredictionBundle, seed: u64, smoothness: f64) -> Vec<TargetPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = smoothness.clamp(0.0, 0.999);
    let innov = (1.0 - s * s).sqrt();
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    bundle
        .targets
        .iter()
        .map(|f| {
            let mut pts = Vec::with_capacity(f.yhat.len() + 1);
            pts.push(f.origin);
            let (mut zr, mut za): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            for (h, (&y, &g)) in f.yhat.iter().zip(&f.radii).enumerate() {
                let (ur, ua) = if s == 0.0 {
                    (rng.gen::<f64>(), rng.gen::<f64>())
                } else {
                    if h > 0 {
                        zr = s * zr + innov * rng.sample::<f64, _>(StandardNormal);
                        za = s * za + innov * rng.sample::<f64, _>(StandardNormal);
                    }
                    (unit.cdf(zr), unit.cdf(za))
                };
                let r = g * ur;
                let th = std::f64::consts::TAU * ua;
                pts.push([y[0] + r * th.cos(), y[1] + r * th.sin()]);
            }
            TargetPath::new(bundle.t0, bundle.dt, pts)
        })
        .collect()
}

/// Caches calibrated radii per (target, sample index, horizon); calibration
/// depends only on the calibration set, never on the live history.
pub struct Forecaster {
    pub ids: Vec<String>,
    pub dt: f64,
    pub delta: f64,
    pub correction: CpCorrection,
    predictors: Vec<Box<dyn Predictor>>,
    calibration: Vec<Vec<Vec<Point>>>,
    cache: Mutex<HashMap<(usize, usize, usize), Vec<f64>>>,
}

impl Forecaster {
    pub fn new(
        ids: Vec<String>,
        dt: f64,
        delta: f64,
        correction: CpCorrection,
        predictors: Vec<Box<dyn Predictor>>,
        calibration: Vec<Vec<Vec<Point>>>,
    ) -> Self {
        Self {
            ids,
            dt,
            delta,
            correction,
            predictors,
            calibration,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn predictor(&self, m: usize) -> &dyn Predictor {
        self.predictors[m].as_ref()
    }

    /// Longest horizon the calibration trajectories support at index `t`.
    pub fn max_horizon(&self, t: usize) -> usize {
        self.calibration
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.iter().map(|p| p.len()).min().unwrap_or(0).saturating_sub(t + 1))
            .min()
            .unwrap_or(usize::MAX)
    }

    pub fn radii(&self, m: usize, t: usize, horizon: usize) -> Result<Vec<f64>, PredictionError> {
        if let Some(hit) = self.cache.lock().unwrap().get(&(m, t, horizon)) {
            return Ok(hit.clone());
        }
        let cal: Vec<&[Point]> = self.calibration[m].iter().map(Vec::as_slice).collect();
        let r = if cal.is_empty() {
            vec![0.0; horizon]
        } else {
            calibrate(self.predictors[m].as_ref(), &cal, t, horizon, self.delta, self.correction)?
        };
        self.cache.lock().unwrap().insert((m, t, horizon), r.clone());
        Ok(r)
    }

    /// Forecast from histories whose last sample is at absolute time `t0`.
    pub fn forecast(
        &self,
        histories: &[&[Point]],
        t0: f64,
        horizon: usize,
    ) -> Result<PredictionBundle, PredictionError> {
        let mut targets = Vec::with_capacity(self.ids.len());
        for (m, obs) in histories.iter().enumerate() {
            if obs.is_empty() {
                return Err(PredictionError::NoObservations(self.ids[m].clone()));
            }
            targets.push(TargetForecast {
                id: self.ids[m].clone(),
                origin: *obs.last().unwrap(),
                yhat: self.predictors[m].predict(obs, horizon),
                radii: self.radii(m, obs.len() - 1, horizon)?,
                vmax: max_speed(obs, self.dt),
            });
        }
        Ok(PredictionBundle {
            t0,
            dt: self.dt,
            delta: self.delta,
            targets,
        })
    }
}
