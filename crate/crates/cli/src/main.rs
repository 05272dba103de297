use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use umbrella::executor::{Method, MissionReport, MissionState};
use umbrella::prediction::TrajectoryRecord;
use umbrella_cli::experiment::{coverage, paired_makespans, run_batch, write_outputs, Run, Summary};
use umbrella_cli::report::{write_gantt, write_metrics};
use umbrella_cli::scenario::{Scenario, World};
use umbrella_cli::stats::{paired_ratio_test, pitman_morgan_test};

#[derive(Parser)]
#[command(name = "umbrella", version, about = "Risk-aware multi-robot planning for moving targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report empirical coverage of the prediction regions.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
        /// Held-out trajectories to test on.
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 1_000_000)]
        seed_base: u64,
    },
    /// Write sampled target trajectories as JSON lines.
    Generate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the initial plan for one seed.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run missions over a range of seeds.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render gantt and metrics tables from earlier runs.
    Report {
        /// Mission JSON files to turn into `<name>.gantt.csv` next to `--out`.
        #[arg(long)]
        mission: Vec<PathBuf>,
        /// Summary files to combine into one metrics table.
        #[arg(long)]
        summary: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated list of ours, ntp, nu.
    #[arg(long, default_value = "ours", value_delimiter = ',')]
    method: Vec<String>,
    /// Search iterations per planner call.
    #[arg(long, conflicts_with = "budget")]
    iters: Option<u64>,
    /// Search wall-clock budget per planner call, seconds.
    #[arg(long)]
    budget: Option<f64>,
    /// Also allow the clairvoyant reference method.
    #[arg(long, hide = true)]
    cs: bool,
}

impl Common {
    fn load(&self) -> Result<(Scenario, Vec<Method>)> {
        let mut s = Scenario::load(&self.scenario)?;
        if let Some(n) = self.iters {
            s.parameters.iterations = Some(n);
            s.parameters.budget_s = None;
        }
        if let Some(b) = self.budget {
            s.parameters.budget_s = Some(b);
        }
        let mut methods = Vec::new();
        for m in &self.method {
            let m: Method = m.parse().map_err(anyhow::Error::msg)?;
            if m == Method::Cs && !self.cs {
                bail!("unknown method `cs`");
            }
            methods.push(m);
        }
        Ok((s, methods))
    }
}

fn prepare(s: &Scenario) -> Result<World> {
    let world = World::prepare(s)?;
    for w in &world.warnings {
        eprintln!("warning: {w}");
    }
    Ok(world)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Calibrate { scenario, test, seed_base } => {
            let s = Scenario::load(&scenario)?;
            let world = prepare(&s)?;
            let cov = coverage(&world, test, seed_base)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&cov)?)?;
            let target = 1.0 - s.parameters.delta;
            for c in &cov {
                eprintln!(
                    "{}: joint coverage {:.3} (target {:.2}), mean radius {:.2}",
                    c.target, c.joint, target, c.mean_radius
                );
            }
        }
        Command::Generate { scenario, count, seed_base, out: path } => {
            let s = Scenario::load(&scenario)?;
            let world = World::prepare(&s)?;
            let mut text = String::new();
            for i in 0..count as u64 {
                let truth = world.ground_truth(seed_base + i);
                for (m, id) in truth.ids.iter().enumerate() {
                    let rec = TrajectoryRecord {
                        target: id.clone(),
                        dt: truth.dt,
                        points: truth.points[m].clone(),
                    };
                    text.push_str(&serde_json::to_string(&rec)?);
                    text.push('\n');
                }
            }
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        Command::Plan { common, seed } => {
            let (s, methods) = common.load()?;
            let world = prepare(&s)?;
            let truth = world.ground_truth(seed);
            let method = methods.first().copied().unwrap_or(Method::Ours);
            let state = MissionState::new(
                world.team.clone(),
                world.tasks.clone(),
                s.rules.clone(),
                s.failures.clone(),
                &truth,
                &world.forecaster,
                world.config.clone(),
                method,
                seed,
            )?;
            let outcome = state.initial_plan()?;
            writeln!(out, "{}", serde_json::to_string_pretty(&outcome.plan)?)?;
            eprintln!(
                "{} iterations, {} nodes, cvar {:.2}, first solution {:.3} s",
                outcome.stats.iterations, outcome.stats.nodes, outcome.plan.cvar, outcome.stats.first_solution_s
            );
        }
        Command::Run { common, seeds, seed_base, out: dir } => {
            let (s, methods) = common.load()?;
            let world = prepare(&s)?;
            let seed_list: Vec<u64> = (seed_base..seed_base + seeds).collect();
            let batches: Vec<(Method, Vec<Run>)> =
                methods.iter().map(|&m| (m, run_batch(&world, m, &seed_list))).collect();
            let summary = write_outputs(&dir, &s.name, &seed_list, &batches)?;
            for (m, sm) in &summary.methods {
                writeln!(
                    out,
                    "{m}: mean {:.2} s, variance {:.2}, {} of {} failed",
                    sm.mean_makespan, sm.variance_makespan, sm.failed, sm.runs
                )?;
            }
            let find = |m: Method| batches.iter().find(|(x, _)| *x == m).map(|(_, r)| r.as_slice());
            if let Some(ours) = find(Method::Ours) {
                if let Some(ntp) = find(Method::Ntp) {
                    let p = paired_makespans(&[ours, ntp]);
                    let t = paired_ratio_test(&p[0], &p[1], 0.95);
                    writeln!(out, "ours vs ntp, mean 5% lower: t = {:.3}, p = {:.4}", t.statistic, t.p_value)?;
                }
                if let Some(nu) = find(Method::Nu) {
                    let p = paired_makespans(&[ours, nu]);
                    let t = pitman_morgan_test(&p[0], &p[1], 0.7);
                    writeln!(out, "ours vs nu, variance 30% lower: t = {:.3}, p = {:.4}", t.statistic, t.p_value)?;
                }
            }
        }
        Command::Report { mission, summary, out: path } => {
            if mission.is_empty() && summary.is_empty() {
                bail!("pass at least one --mission or --summary file");
            }
            for m in &mission {
                let text = fs::read_to_string(m).with_context(|| format!("reading {}", m.display()))?;
                let report: MissionReport = serde_json::from_str(&text)?;
                let stem = m.file_stem().and_then(|s| s.to_str()).unwrap_or("mission");
                let dest = if mission.len() == 1 && summary.is_empty() {
                    path.clone()
                } else {
                    path.with_file_name(format!("{stem}.gantt.csv"))
                };
                write_gantt(&dest, &report)?;
                writeln!(out, "wrote {}", dest.display())?;
            }
            if !summary.is_empty() {
                let all = summary
                    .iter()
                    .map(|p| {
                        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                        Ok(serde_json::from_str::<Summary>(&text)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                write_metrics(&path, &all)?;
                writeln!(out, "wrote {}", path.display())?;
            }
        }
    }
    Ok(())
}
