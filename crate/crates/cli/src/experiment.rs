//! Batches of missions over seeds and the files they leave behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use umbrella::executor::{run_mission, Method, MissionReport};

use crate::scenario::World;
use crate::stats::{mean, variance};

/// One row of `runs.csv`. Wall-clock fields are kept out so the file is
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub seed: u64,
    pub status: String,
    pub average_makespan: Option<f64>,
    pub weighted_makespan: Option<f64>,
    pub end_time: Option<f64>,
    pub replans: usize,
    pub adopted_replans: usize,
    pub satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub row: RunRow,
    pub report: Option<MissionReport>,
    pub wall_s: f64,
}

pub fn run_one(world: &World, method: Method, seed: u64) -> Run {
    let clock = Instant::now();
    let truth = world.ground_truth(seed);
    let outcome = run_mission(
        &world.team,
        world.tasks.clone(),
        world.scenario.rules.clone(),
        world.scenario.failures.clone(),
        &truth,
        &world.forecaster,
        &world.config,
        method,
        seed,
    );
    let wall_s = clock.elapsed().as_secs_f64();
    let row = match &outcome {
        Ok(r) => RunRow {
            method: method.to_string(),
            seed,
            status: "ok".into(),
            average_makespan: Some(r.average_makespan),
            weighted_makespan: r.weighted_makespan,
            end_time: Some(r.end_time),
            replans: r.replan_events.len(),
            adopted_replans: r.replan_events.iter().filter(|e| e.adopted).count(),
            satisfied: r.satisfied.values().all(|&s| s),
        },
        Err(e) => RunRow {
            method: method.to_string(),
            seed,
            status: e.to_string(),
            average_makespan: None,
            weighted_makespan: None,
            end_time: None,
            replans: 0,
            adopted_replans: 0,
            satisfied: false,
        },
    };
    Run {
        row,
        report: outcome.ok(),
        wall_s,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub runs: usize,
    pub failed: usize,
    pub mean_makespan: f64,
    pub variance_makespan: f64,
    pub mean_first_solution_s: f64,
    pub mean_convergence_s: f64,
    pub mean_wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub methods: BTreeMap<String, MethodSummary>,
}

pub fn summarize(runs: &[Run]) -> MethodSummary {
    let ok: Vec<&Run> = runs.iter().filter(|r| r.report.is_some()).collect();
    let m: Vec<f64> = ok.iter().filter_map(|r| r.row.average_makespan).collect();
    let avg = |f: &dyn Fn(&MissionReport) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r.report.as_ref().unwrap())).sum::<f64>() / ok.len() as f64
        }
    };
    MethodSummary {
        runs: runs.len(),
        failed: runs.len() - ok.len(),
        mean_makespan: if m.is_empty() { f64::NAN } else { mean(&m) },
        variance_makespan: variance(&m),
        mean_first_solution_s: avg(&|r| r.first_solution_s),
        mean_convergence_s: avg(&|r| r.convergence_s),
        mean_wall_s: runs.iter().map(|r| r.wall_s).sum::<f64>() / runs.len().max(1) as f64,
    }
}

pub fn run_batch(world: &World, method: Method, seeds: &[u64]) -> Vec<Run> {
    seeds.iter().map(|&s| run_one(world, method, s)).collect()
}

pub fn write_runs_csv(path: &Path, runs: &[Run]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in runs {
        w.serialize(&r.row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `runs.csv`, `summary.json` and one `missions/<method>-<seed>.json`
/// per successful mission into `out`.
pub fn write_outputs(out: &Path, scenario: &str, seeds: &[u64], batches: &[(Method, Vec<Run>)]) -> Result<Summary> {
    fs::create_dir_all(out.join("missions")).with_context(|| format!("creating {}", out.display()))?;
    let all: Vec<Run> = batches.iter().flat_map(|(_, runs)| runs.iter().cloned()).collect();
    write_runs_csv(&out.join("runs.csv"), &all)?;
    for run in &all {
        if let Some(report) = &run.report {
            let p = out.join("missions").join(format!("{}-{}.json", run.row.method, run.row.seed));
            fs::write(&p, serde_json::to_string_pretty(report)?)?;
        }
    }
    let summary = Summary {
        scenario: scenario.to_string(),
        seeds: seeds.to_vec(),
        methods: batches.iter().map(|(m, runs)| (m.to_string(), summarize(runs))).collect(),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Makespans of seeds on which every listed batch succeeded, one vector per
/// batch in the same seed order.
pub fn paired_makespans(batches: &[&[Run]]) -> Vec<Vec<f64>> {
    let Some(first) = batches.first() else {
        return Vec::new();
    };
    let keep: Vec<usize> = (0..first.len())
        .filter(|&i| batches.iter().all(|b| b[i].row.average_makespan.is_some()))
        .collect();
    batches
        .iter()
        .map(|b| keep.iter().map(|&i| b[i].row.average_makespan.unwrap()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub target: String,
    pub trajectories: usize,
    pub horizon: usize,
    /// Fraction of trajectories whose whole future stays inside the regions.
    pub joint: f64,
    /// Mean per-step fraction of points inside the regions.
    pub per_step: f64,
    pub mean_radius: f64,
}

/// Empirical coverage of the prediction regions issued at mission time zero
/// on `n` fresh ground-truth draws starting at `seed_base`.
pub fn coverage(world: &World, n: usize, seed_base: u64) -> Result<Vec<Coverage>> {
    let p = &world.scenario.parameters;
    let horizon = ((p.horizon / p.sample_dt).ceil() as usize).min(world.forecaster.max_horizon(p.warmup));
    let mut hits = vec![(0usize, 0usize); world.forecaster.ids.len()];
    let mut radius = vec![0.0; world.forecaster.ids.len()];
    for i in 0..n as u64 {
        let truth = world.ground_truth(seed_base.wrapping_add(i));
        let hist: Vec<&[umbrella::geom::Point]> = (0..truth.ids.len()).map(|m| truth.history(m, 0.0)).collect();
        let bundle = world.forecaster.forecast(&hist, 0.0, horizon)?;
        for (m, f) in bundle.targets.iter().enumerate() {
            let k = truth.index_at(0.0);
            let inside = (0..horizon)
                .filter(|&j| umbrella::geom::dist(f.yhat[j], truth.points[m][k + 1 + j]) <= f.radii[j])
                .count();
            hits[m].0 += usize::from(inside == horizon);
            hits[m].1 += inside;
            radius[m] = f.radii.iter().sum::<f64>() / horizon as f64;
        }
    }
    Ok(world
        .forecaster
        .ids
        .iter()
        .enumerate()
        .map(|(m, id)| Coverage {
            target: id.clone(),
            trajectories: n,
            horizon,
            joint: hits[m].0 as f64 / n as f64,
            per_step: hits[m].1 as f64 / (n * horizon) as f64,
            mean_radius: radius[m],
        })
        .collect())
}
