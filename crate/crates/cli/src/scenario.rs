//! Scenario files: team, targets, tasks, events and parameters.
//!
//! Targets either name a synthetic motion model, from which calibration,
//! training and ground-truth trajectories are drawn with independent seeds,
//! or a JSON-lines trajectory file split into calibration, training and
//! held-out records.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use umbrella::executor::{FailureEvent, GroundTruth, MissionConfig, ReactiveRule, TaskSpec, Trigger};
use umbrella::formula::{parse_scltl, Declarations};
use umbrella::generator::MotionModel;
use umbrella::geom::Point;
use umbrella::planner::{Budget, Collaboration, RiskConfig, Robot, TeamModel};
use umbrella::poset::PrecedenceSemantics;
use umbrella::prediction::{
    fit_predictor_or_fallback, quantile_index, CpCorrection, Forecaster, PredictorKind, TrajectoryDataset, TrajectoryRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Point,
    pub max: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSource {
    Motion { motion: MotionModel },
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub id: String,
    #[serde(flatten)]
    pub source: TargetSource,
    /// Ground-truth motion when it differs from the calibration source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<MotionModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub name: String,
    pub formula: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Parameters {
    /// Simulation and execution tick, seconds.
    pub dt: f64,
    /// Target sampling period, seconds.
    pub sample_dt: f64,
    /// Samples observed before mission time zero.
    pub warmup: usize,
    pub reach_threshold: f64,
    pub delta: f64,
    pub cp_correction: CpCorrection,
    pub predictor: String,
    pub calibration_size: usize,
    pub training_size: usize,
    /// Longest forecast horizon, seconds.
    pub horizon: f64,
    pub initial_horizon: f64,
    pub alpha: f64,
    pub z: usize,
    pub q: f64,
    pub epsilon: f64,
    pub iterations: Option<u64>,
    pub budget_s: Option<f64>,
    pub branching_limit: usize,
    pub sample_smoothness: f64,
    pub gamma: f64,
    pub cooldown: f64,
    pub degradation_checks: bool,
    pub precedence_semantics: PrecedenceSemantics,
    pub max_time: f64,
    pub plan_time: f64,
    pub convergence_window: u64,
    pub dataset_seed: u64,
}

impl Default for Parameters {
    fn default() -> Self {
        Self {
            dt: 0.5,
            sample_dt: 1.0,
            warmup: 10,
            reach_threshold: 0.5,
            delta: 0.15,
            cp_correction: CpCorrection::Bonferroni,
            predictor: "ar2".into(),
            calibration_size: 500,
            training_size: 100,
            horizon: 60.0,
            initial_horizon: 60.0,
            alpha: 0.05,
            z: 20,
            q: 1.5,
            epsilon: 0.3,
            iterations: Some(150),
            budget_s: None,
            branching_limit: 64,
            sample_smoothness: 0.0,
            gamma: 0.2,
            cooldown: 5.0,
            degradation_checks: true,
            precedence_semantics: PrecedenceSemantics::StartCompletion,
            max_time: 300.0,
            plan_time: 400.0,
            convergence_window: 100,
            dataset_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub workspace: Workspace,
    pub robots: Vec<Robot>,
    pub collaborations: Vec<Collaboration>,
    pub targets: Vec<TargetSpec>,
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub rules: Vec<ReactiveRule>,
    #[serde(default)]
    pub failures: Vec<FailureEvent>,
    #[serde(default)]
    pub parameters: Parameters,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Loads and validates a scenario; relative trajectory-file paths are
    /// resolved against the scenario's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut s: Scenario =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut s.targets {
            if let TargetSource::File { file } = &mut t.source {
                if file.is_relative() {
                    *file = base.join(&*file);
                }
            }
        }
        s.validate().with_context(|| format!("validating {}", path.display()))?;
        Ok(s)
    }

    pub fn team(&self) -> TeamModel {
        TeamModel {
            robots: self.robots.clone(),
            collaborations: self.collaborations.clone(),
        }
    }

    pub fn target_ids(&self) -> Vec<String> {
        self.targets.iter().map(|t| t.id.clone()).collect()
    }

    pub fn declarations(&self) -> Declarations {
        Declarations {
            robots: self.robots.iter().map(|r| r.id.clone()).collect(),
            targets: self.targets.iter().map(|t| t.id.clone()).collect(),
            collaborations: self.collaborations.iter().map(|c| c.id.clone()).collect(),
        }
    }

    pub fn predictor_kind(&self) -> Result<PredictorKind> {
        self.parameters.predictor.parse().map_err(|e: String| anyhow!(e))
    }

    pub fn validate(&self) -> Result<()> {
        self.team().validate().map_err(|e| anyhow!(e))?;
        let mut ids = BTreeSet::new();
        for t in &self.targets {
            ensure!(ids.insert(&t.id), "duplicate target id {}", t.id);
        }
        let decls = self.declarations();
        let mut names = BTreeSet::new();
        for task in &self.tasks {
            ensure!(names.insert(&task.name), "duplicate task name {}", task.name);
            let f = parse_scltl(&task.formula).with_context(|| format!("task {}", task.name))?;
            f.check_declared(&decls).with_context(|| format!("task {}", task.name))?;
        }
        for r in &self.rules {
            ensure!(names.insert(&r.event), "rule {} reuses a task name", r.event);
            let f = parse_scltl(&r.response).with_context(|| format!("rule {}", r.event))?;
            f.check_declared(&decls).with_context(|| format!("rule {}", r.event))?;
            if let Trigger::Proximity { target, robot, .. } = &r.trigger {
                ensure!(ids.contains(target), "rule {} watches unknown target {target}", r.event);
                if let Some(id) = robot {
                    ensure!(decls.robots.contains(id), "rule {} names unknown robot {id}", r.event);
                }
            }
        }
        for f in &self.failures {
            ensure!(decls.robots.contains(&f.robot), "failure names unknown robot {}", f.robot);
        }
        let p = &self.parameters;
        ensure!(p.dt > 0.0 && p.sample_dt > 0.0, "time steps must be positive");
        ensure!(p.delta > 0.0 && p.delta < 1.0, "delta must lie in (0, 1)");
        ensure!(p.gamma > 0.0 && p.gamma < 1.0, "gamma must lie in (0, 1)");
        ensure!(p.horizon >= p.sample_dt, "horizon shorter than one sample");
        ensure!(p.calibration_size >= 1, "calibration set is empty");
        ensure!(
            p.iterations.is_some() || p.budget_s.is_some(),
            "set either iterations or budget_s"
        );
        let steps = self.horizon_steps();
        let level = p.cp_correction.step_level(p.delta, steps);
        ensure!(
            quantile_index(p.calibration_size, level) <= p.calibration_size,
            "{} calibration trajectories cannot bound a {steps}-step horizon at delta {}",
            p.calibration_size,
            p.delta
        );
        self.predictor_kind()?;
        self.mission_config().risk.validate()?;
        Ok(())
    }

    pub fn mission_config(&self) -> MissionConfig {
        let p = &self.parameters;
        MissionConfig {
            dt: p.dt,
            reach_threshold: p.reach_threshold,
            semantics: p.precedence_semantics,
            gamma: p.gamma,
            cooldown: p.cooldown,
            eta_decrement: None,
            max_time: p.max_time,
            plan_time: p.plan_time,
            initial_horizon: p.initial_horizon,
            min_horizon: 10.0 * p.sample_dt,
            max_horizon: p.horizon,
            horizon_margin: 0.25,
            degradation_checks: p.degradation_checks,
            risk: RiskConfig {
                alpha: p.alpha,
                z: p.z,
                q: p.q,
                epsilon: p.epsilon,
                budget: match (p.iterations, p.budget_s) {
                    (_, Some(s)) => Budget::Seconds(s),
                    (Some(n), None) => Budget::Iterations(n),
                    (None, None) => Budget::Iterations(100),
                },
                seed: 0,
                branching_limit: p.branching_limit,
                use_uncertainty: true,
                sample_smoothness: p.sample_smoothness,
                convergence_window: p.convergence_window,
            },
        }
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        self.tasks
            .iter()
            .map(|t| {
                Ok(TaskSpec {
                    name: t.name.clone(),
                    formula: parse_scltl(&t.formula)?,
                    priority: t.priority,
                })
            })
            .collect()
    }

    /// Samples per generated trajectory: warmup, the mission cap and one
    /// full forecast horizon.
    pub fn trajectory_len(&self) -> usize {
        let p = &self.parameters;
        p.warmup + ((p.max_time + p.horizon) / p.sample_dt).ceil() as usize + 2
    }

    fn horizon_steps(&self) -> usize {
        (self.parameters.horizon / self.parameters.sample_dt).ceil() as usize
    }
}

fn seed_for(base: u64, stream: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ index.wrapping_mul(0x94D0_49BB_1331_11EB)
}

fn load_target_file(path: &Path, id: &str) -> Result<Vec<TrajectoryRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TrajectoryRecord =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if r.target == id {
            out.push(r);
        }
    }
    ensure!(!out.is_empty(), "{} has no trajectories for target {id}", path.display());
    Ok(out)
}

/// Calibrated forecaster plus everything needed to draw missions.
pub struct World {
    pub scenario: Scenario,
    pub team: TeamModel,
    pub tasks: Vec<TaskSpec>,
    pub forecaster: Forecaster,
    pub config: MissionConfig,
    /// Predictor fallbacks, one message per affected target.
    pub warnings: Vec<String>,
    held_out: BTreeMap<usize, Vec<Vec<Point>>>,
}

impl World {
    pub fn prepare(scenario: &Scenario) -> Result<Self> {
        let p = &scenario.parameters;
        let kind = scenario.predictor_kind()?;
        let len = scenario.trajectory_len();
        let (n_cal, n_tra) = (p.calibration_size, p.training_size);
        let mut predictors = Vec::new();
        let mut calibration = Vec::new();
        let mut warnings = Vec::new();
        let mut held_out = BTreeMap::new();
        for (m, t) in scenario.targets.iter().enumerate() {
            let (cal, tra): (Vec<Vec<Point>>, Vec<Vec<Point>>) = match &t.source {
                TargetSource::Motion { motion } => {
                    let draw = |i: usize| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(p.dataset_seed, m as u64, i as u64));
                        motion.sample(&mut rng, len, p.sample_dt)
                    };
                    ((0..n_cal).map(draw).collect(), (n_cal..n_cal + n_tra).map(draw).collect())
                }
                TargetSource::File { file } => {
                    let records = load_target_file(file, &t.id)?;
                    for r in &records {
                        ensure!(
                            (r.dt - p.sample_dt).abs() < 1e-9,
                            "{}: sample period {} differs from sample_dt",
                            file.display(),
                            r.dt
                        );
                    }
                    let ds = TrajectoryDataset::from_records(records, n_cal)?;
                    let samples = &ds.targets[&t.id];
                    let tra: Vec<Vec<Point>> =
                        samples.training.iter().take(n_tra).map(|&i| samples.trajectories[i].clone()).collect();
                    let rest: Vec<Vec<Point>> =
                        samples.training.iter().skip(n_tra).map(|&i| samples.trajectories[i].clone()).collect();
                    if rest.is_empty() && t.truth.is_none() {
                        bail!("{}: no held-out trajectories left for ground truth", file.display());
                    }
                    held_out.insert(m, rest);
                    (samples.calibration_set().into_iter().map(<[Point]>::to_vec).collect(), tra)
                }
            };
            let tra_refs: Vec<&[Point]> = tra.iter().map(Vec::as_slice).collect();
            let (pred, err) = fit_predictor_or_fallback(&tra_refs, kind);
            if let Some(e) = err {
                warnings.push(format!("target {}: {e}; using constant velocity", t.id));
            }
            predictors.push(pred);
            calibration.push(cal);
        }
        let forecaster = Forecaster::new(
            scenario.target_ids(),
            p.sample_dt,
            p.delta,
            p.cp_correction,
            predictors,
            calibration,
        );
        let mut config = scenario.mission_config();
        config.initial_horizon = config.initial_horizon.min(scenario.horizon_steps() as f64 * p.sample_dt);
        Ok(Self {
            scenario: scenario.clone(),
            team: scenario.team(),
            tasks: scenario.task_specs()?,
            forecaster,
            config,
            warnings,
            held_out,
        })
    }

    /// Hidden target trajectories for one mission seed.
    pub fn ground_truth(&self, seed: u64) -> GroundTruth {
        let p = &self.scenario.parameters;
        let len = self.scenario.trajectory_len();
        let points = self
            .scenario
            .targets
            .iter()
            .enumerate()
            .map(|(m, t)| match (&t.truth, &t.source) {
                (Some(motion), _) | (None, TargetSource::Motion { motion }) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, m as u64, u64::MAX));
                    motion.sample(&mut rng, len, p.sample_dt)
                }
                (None, TargetSource::File { .. }) => {
                    let pool = &self.held_out[&m];
                    pool[(seed % pool.len() as u64) as usize].clone()
                }
            })
            .collect();
        GroundTruth {
            ids: self.scenario.target_ids(),
            dt: p.sample_dt,
            warmup: p.warmup,
            points,
        }
    }
}
