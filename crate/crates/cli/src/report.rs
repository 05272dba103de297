//! Gantt and metrics tables rendered from saved mission results.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use umbrella::executor::MissionReport;

use crate::experiment::Summary;

#[derive(Debug, Serialize)]
struct GanttRow<'a> {
    kind: &'a str,
    robot: &'a str,
    label: String,
    start: f64,
    end: f64,
}

/// One row per robot and subtask, followed by one zero-length `replan`
/// marker per planner call.
pub fn write_gantt(path: &Path, report: &MissionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut entries = report.gantt.clone();
    entries.sort_by(|a, b| a.robot.cmp(&b.robot).then(a.start.total_cmp(&b.start)));
    for g in &entries {
        w.serialize(GanttRow {
            kind: "subtask",
            robot: &g.robot,
            label: g.subtask.clone(),
            start: g.start,
            end: g.end,
        })?;
    }
    for e in &report.replan_events {
        let reason = serde_json::to_value(e.reason)?;
        let mut label = reason.as_str().unwrap_or("replan").to_string();
        if !e.adopted {
            label.push_str(" (rejected)");
        }
        w.serialize(GanttRow {
            kind: "replan",
            robot: "",
            label,
            start: e.t,
            end: e.t,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    scenario: &'a str,
    method: &'a str,
    runs: usize,
    failed: usize,
    mean_makespan: f64,
    variance_makespan: f64,
    first_solution_s: f64,
    convergence_s: f64,
}

pub fn write_metrics(path: &Path, summaries: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for s in summaries {
        for (method, m) in &s.methods {
            w.serialize(MetricsRow {
                scenario: &s.scenario,
                method,
                runs: m.runs,
                failed: m.failed,
                mean_makespan: m.mean_makespan,
                variance_makespan: m.variance_makespan,
                first_solution_s: m.mean_first_solution_s,
                convergence_s: m.mean_convergence_s,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
