//! The `advsim` command line.
//!
//! Exit codes: 0 on success (per-scenario failures are listed in
//! `failures.json`), 1 when every scenario of a batch failed, 2 for usage,
//! configuration and I/O errors.

use crate::config::{resolve, CliConfig};
use crate::metrics::{evaluate, table, MetricsReport};
use crate::planner::learned::LearnedPlannerWeights;
use crate::prior::KinematicPrior;
use crate::render::render_svg;
use crate::scenario::{load_scenario, Scenario};
use crate::sim::{batch_run, RolloutLog, SimConfig};
use crate::suite::{
    ablation_configs, atomic_write, fit_scenario_prior, load_suite, write_suite, Manifest,
};
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ALL_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "advsim",
    version,
    about = "Adversarial traffic scenario generation"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, same as `--set sim.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (for `render`, an .svg path is also accepted).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Configuration override `key=value`, e.g. `sim.replan_hz=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic scenarios and a manifest.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        /// Template name or `all`.
        #[arg(long)]
        template: Option<String>,
    },
    /// Roll out every scenario of a directory and report metrics.
    Generate {
        #[arg(long)]
        scenarios: PathBuf,
        /// optimization | heuristic | none
        #[arg(long)]
        intention_mode: Option<String>,
        /// AV planner: playback | rule
        #[arg(long)]
        planner: Option<String>,
        /// closed-loop | open-loop
        #[arg(long)]
        mode: Option<String>,
        /// Learned planner weight file.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run the four adversary variants and tabulate them.
    Ablate {
        #[arg(long)]
        scenarios: PathBuf,
    },
    /// Draw a rollout log over its scenario map as SVG.
    Render {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Metrics over existing logs (`<name>.jsonl` paired with `<name>.json`).
    Eval {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
    },
}

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(
    args: I,
    env: &[(String, String)],
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    match dispatch(cli, env, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn quoted(v: &str) -> String {
    format!("{v:?}")
}

fn resolve_config(cli: &Cli, extra: Vec<String>, env: &[(String, String)]) -> Result<CliConfig> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut sets = cli.sets.clone();
    if let Some(s) = cli.seed {
        sets.push(format!("sim.seed={s}"));
    }
    if let Some(j) = cli.jobs {
        sets.push(format!("jobs={j}"));
    }
    sets.extend(extra);
    let cfg = resolve(text.as_deref(), env, &sets)?;
    cfg.sim.validate()?;
    Ok(cfg)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn dispatch(
    cli: Cli,
    env: &[(String, String)],
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32> {
    match &cli.command {
        Command::Synth { n, template } => {
            let mut extra = Vec::new();
            if let Some(n) = n {
                extra.push(format!("synth.n={n}"));
            }
            if let Some(t) = template {
                extra.push(format!("synth.template={}", quoted(t)));
            }
            let cfg = resolve_config(&cli, extra, env)?;
            let manifest = Manifest::plan(cfg.synth.n, &cfg.synth.template, cfg.sim.seed)?;
            write_suite(&cli.out, &manifest)?;
            let _ = writeln!(
                stdout,
                "wrote {} scenarios to {}",
                manifest.entries.len(),
                cli.out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Generate {
            scenarios,
            intention_mode,
            planner,
            mode,
            weights,
        } => {
            let mut extra = Vec::new();
            for (key, v) in [
                ("sim.intention_mode", intention_mode),
                ("sim.planner", planner),
                ("sim.mode", mode),
            ] {
                if let Some(v) = v {
                    extra.push(format!("{key}={}", quoted(v)));
                }
            }
            if let Some(w) = weights {
                extra.push(format!("weights={}", quoted(&w.to_string_lossy())));
            }
            let cfg = resolve_config(&cli, extra, env)?;
            let suite = load_suite(scenarios)?;
            let sim = prepare(&cfg, &suite)?;
            write_run_config(&cli.out, &cfg, &sim)?;
            let pool = thread_pool(cfg.jobs)?;
            let batch = run_batch(&pool, &suite, &sim, &cli.out)?;
            let code = batch.exit_code(stderr);
            if let Some(report) = batch.report {
                write_report(&cli.out, "report", &[("generated".into(), &report)])?;
                let _ = write!(stdout, "{}", table(&[("generated".into(), &report)]));
            }
            Ok(code)
        }
        Command::Ablate { scenarios } => {
            let cfg = resolve_config(&cli, Vec::new(), env)?;
            let suite = load_suite(scenarios)?;
            let sim = prepare(&cfg, &suite)?;
            write_run_config(&cli.out, &cfg, &sim)?;
            let pool = thread_pool(cfg.jobs)?;
            let mut reports: Vec<(String, MetricsReport)> = Vec::new();
            let mut code = EXIT_OK;
            for (name, variant) in ablation_configs(&sim) {
                let batch = run_batch(&pool, &suite, &variant, &cli.out.join(name))?;
                code = code.max(batch.exit_code(stderr));
                if let Some(r) = batch.report {
                    reports.push((name.to_string(), r));
                }
            }
            let rows: Vec<(String, &MetricsReport)> =
                reports.iter().map(|(n, r)| (n.clone(), r)).collect();
            if !rows.is_empty() {
                write_report(&cli.out, "ablation", &rows)?;
                let _ = write!(stdout, "{}", table(&rows));
            }
            Ok(code)
        }
        Command::Render { log, scenario } => {
            let text = std::fs::read_to_string(log).map_err(|e| Error::io(log, e))?;
            let log_data = RolloutLog::from_jsonl(&text)?;
            let scen = read_scenario(scenario)?;
            let svg = render_svg(&log_data, &scen)?;
            let path = if cli.out.extension().is_some_and(|e| e == "svg") {
                cli.out.clone()
            } else {
                let stem = log
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or("rollout".into());
                cli.out.join(format!("{stem}.svg"))
            };
            atomic_write(&path, svg.as_bytes())?;
            let _ = writeln!(stdout, "wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Eval { logs, scenarios } => {
            let suite = load_suite(scenarios)?;
            let mut pairs = Vec::new();
            for (name, s) in &suite {
                let p = logs.join(format!("{name}.jsonl"));
                if p.exists() {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    pairs.push((RolloutLog::from_jsonl(&text)?, s));
                }
            }
            if pairs.is_empty() {
                return Err(Error::Empty("no log matches a scenario name"));
            }
            let (l, s): (Vec<RolloutLog>, Vec<&Scenario>) = pairs.into_iter().unzip();
            let report = evaluate(&l, &s)?;
            write_report(&cli.out, "report", &[("eval".into(), &report)])?;
            let _ = write!(stdout, "{}", table(&[("eval".into(), &report)]));
            Ok(EXIT_OK)
        }
    }
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_scenario(&bytes)
}

/// Simulation config with the prior and learned weights resolved.
pub fn prepare(cfg: &CliConfig, suite: &[(String, Scenario)]) -> Result<SimConfig> {
    let mut sim = cfg.sim.clone();
    if let Some(p) = &cfg.prior.file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        sim.prior = KinematicPrior::from_json(&text)?;
    } else if cfg.prior.fit {
        let scen: Vec<&Scenario> = suite.iter().map(|(_, s)| s).collect();
        sim.prior = fit_scenario_prior(&scen, sim.prior.lambda)?;
    }
    if let Some(w) = &cfg.weights {
        let text = std::fs::read_to_string(w).map_err(|e| Error::io(w, e))?;
        sim.learned_weights = Some(Arc::new(LearnedPlannerWeights::from_json(&text)?));
    }
    sim.validate()?;
    Ok(sim)
}

fn write_run_config(out: &Path, cfg: &CliConfig, sim: &SimConfig) -> Result<()> {
    atomic_write(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    atomic_write(&out.join("prior.json"), sim.prior.to_json().as_bytes())
}

#[derive(Serialize)]
struct Failure<'a> {
    scenario: &'a str,
    error: &'a str,
}

struct Batch {
    n: usize,
    failures: Vec<(String, String)>,
    report: Option<MetricsReport>,
}

impl Batch {
    fn exit_code(&self, stderr: &mut dyn Write) -> i32 {
        for (name, e) in &self.failures {
            let _ = writeln!(stderr, "scenario {name} failed: {e}");
        }
        if self.failures.len() == self.n {
            EXIT_ALL_FAILED
        } else {
            EXIT_OK
        }
    }
}

/// Rolls out the suite, writing `logs/<name>.jsonl`, `failures.json` and
/// `timing.json` under `out`.
fn run_batch(
    pool: &rayon::ThreadPool,
    suite: &[(String, Scenario)],
    sim: &SimConfig,
    out: &Path,
) -> Result<Batch> {
    let scenarios: Vec<Scenario> = suite.iter().map(|(_, s)| s.clone()).collect();
    let results = pool.install(|| batch_run(&scenarios, sim));
    let mut logs = Vec::new();
    let mut paired = Vec::new();
    let mut failures = Vec::new();
    for ((name, s), r) in suite.iter().zip(results) {
        match r {
            Ok(log) => {
                atomic_write(
                    &out.join("logs").join(format!("{name}.jsonl")),
                    log.to_jsonl().as_bytes(),
                )?;
                logs.push(log);
                paired.push(s);
            }
            Err(e) => failures.push((name.clone(), e)),
        }
    }
    let listed: Vec<Failure> = failures
        .iter()
        .map(|(s, e)| Failure {
            scenario: s,
            error: e,
        })
        .collect();
    atomic_write(&out.join("failures.json"), pretty(&listed).as_bytes())?;
    let report = if logs.is_empty() {
        None
    } else {
        Some(evaluate(&logs, &paired)?)
    };
    let timing = serde_json::json!({
        "mean_generation_time": report.as_ref().and_then(|r| r.mean_generation_time),
        "ticks": logs.iter().map(|l| l.generation_times.len()).sum::<usize>(),
    });
    atomic_write(&out.join("timing.json"), pretty(&timing).as_bytes())?;
    Ok(Batch {
        n: suite.len(),
        failures,
        report,
    })
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `<stem>.json` holds the reports keyed by row name; `<stem>.txt` the table
/// without the wall-clock column, so both files are reproducible.
fn write_report(out: &Path, stem: &str, rows: &[(String, &MetricsReport)]) -> Result<()> {
    let json = if rows.len() == 1 {
        pretty(rows[0].1)
    } else {
        let map: serde_json::Map<String, serde_json::Value> = rows
            .iter()
            .map(|(n, r)| (n.clone(), serde_json::to_value(r).expect("serializable")))
            .collect();
        pretty(&map)
    };
    atomic_write(&out.join(format!("{stem}.json")), json.as_bytes())?;
    let untimed: Vec<MetricsReport> = rows
        .iter()
        .map(|(_, r)| MetricsReport {
            mean_generation_time: None,
            ..(*r).clone()
        })
        .collect();
    let trows: Vec<(String, &MetricsReport)> = rows
        .iter()
        .zip(&untimed)
        .map(|((n, _), r)| (n.clone(), r))
        .collect();
    atomic_write(&out.join(format!("{stem}.txt")), table(&trows).as_bytes())
}
