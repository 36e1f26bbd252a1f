//! Per-scenario safety and realism metrics over rollout logs.

use crate::geometry::{arc_progress, polyline_length, Vec2};
use crate::prior::{wasserstein1, EmpiricalSamples};
use crate::scenario::{MapModel, Scenario};
use crate::sim::{RolloutLog, Termination};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Samples before time zero included in kinematic statistics, so that every
/// simulated step contributes an acceleration and a jerk.
const LEAD_IN: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_scenarios: usize,
    pub collision_rate: f64,
    pub offroad_rate: f64,
    pub global_offroad_rate: f64,
    pub inroad_and_collision_rate: f64,
    /// In-road collisions as a share of all collisions; `None` without collisions.
    pub inroad_share_of_collisions: Option<f64>,
    pub accel_w1: f64,
    pub jerk_w1: f64,
    pub route_completion: f64,
    /// Wall-clock dependent, so kept out of the serialized report.
    #[serde(skip)]
    pub mean_generation_time: Option<f64>,
}

fn non_empty<T>(xs: &[T], what: &'static str) -> Result<()> {
    if xs.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

pub fn collision_rate(logs: &[RolloutLog]) -> Result<f64> {
    non_empty(logs, "collision_rate needs at least one log")?;
    let n = logs
        .iter()
        .filter(|l| l.termination == Termination::Collision)
        .count();
    Ok(percent(n, logs.len()))
}

/// Whether the OV centre leaves the road during the rollout (up to and
/// including any collision step), and whether it does so anywhere on the
/// rollout plus the final tick's plan beyond the last logged step.
pub fn offroad_flags(log: &RolloutLog, map: &MapModel) -> (bool, bool) {
    let Some(ov) = log.ov_id.as_deref().and_then(|id| log.positions_of(id)) else {
        return (false, false);
    };
    let truncated = ov[log.current_index()..]
        .iter()
        .any(|p| map.d_margin(*p) < 0.0);
    let global = truncated
        || log
            .ov_plan_tail
            .iter()
            .any(|q| map.d_margin(Vec2::new(q[0], q[1])) < 0.0);
    (truncated, global)
}

fn check_pairs<A, B>(a: &[A], b: &[B]) -> Result<()> {
    non_empty(a, "metrics need at least one log")?;
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "{} logs but {} maps or routes",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `(offroad %, global offroad %)`; `maps[i]` belongs to `logs[i]`.
pub fn offroad_rates(logs: &[RolloutLog], maps: &[&MapModel]) -> Result<(f64, f64)> {
    check_pairs(logs, maps)?;
    let flags: Vec<(bool, bool)> = logs
        .iter()
        .zip(maps)
        .map(|(l, m)| offroad_flags(l, m))
        .collect();
    let off = flags.iter().filter(|f| f.0).count();
    let global = flags.iter().filter(|f| f.1).count();
    Ok((percent(off, logs.len()), percent(global, logs.len())))
}

/// Percentage of logs that collide while the OV stayed on the road.
pub fn inroad_and_collision_rate(logs: &[RolloutLog], maps: &[&MapModel]) -> Result<f64> {
    check_pairs(logs, maps)?;
    let n = logs
        .iter()
        .zip(maps)
        .filter(|(l, m)| l.termination == Termination::Collision && !offroad_flags(l, m).0)
        .count();
    Ok(percent(n, logs.len()))
}

/// Finite-difference acceleration and jerk magnitudes of a position sequence.
pub fn kinematic_samples(positions: &[Vec2], dt: f64) -> (EmpiricalSamples, EmpiricalSamples) {
    let v: Vec<Vec2> = positions.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let a: Vec<Vec2> = v.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let j: Vec<f64> = a.windows(2).map(|w| ((w[1] - w[0]) / dt).norm()).collect();
    (
        EmpiricalSamples::new(a.iter().map(|x| x.norm()).collect()),
        EmpiricalSamples::new(j),
    )
}

/// OV kinematic samples of a rollout, from shortly before time zero onward.
pub fn log_kinematic_samples(log: &RolloutLog) -> (EmpiricalSamples, EmpiricalSamples) {
    let Some(ov) = log.ov_id.as_deref().and_then(|id| log.positions_of(id)) else {
        return Default::default();
    };
    let start = log.current_index().saturating_sub(LEAD_IN);
    kinematic_samples(&ov[start..], log.dt)
}

/// OV kinematic samples of the unmodified scenario over the same window.
pub fn reference_kinematic_samples(scenario: &Scenario) -> (EmpiricalSamples, EmpiricalSamples) {
    let Some(ov) = scenario.ov() else {
        return Default::default();
    };
    let start = scenario.current_index().saturating_sub(LEAD_IN);
    let positions: Vec<Vec2> = ov.trajectory.states[start..]
        .iter()
        .map(|s| s.position())
        .collect();
    kinematic_samples(&positions, scenario.dt)
}

/// Pools per-item sample pairs.
pub fn pool<'a>(
    items: impl IntoIterator<Item = &'a (EmpiricalSamples, EmpiricalSamples)>,
) -> (EmpiricalSamples, EmpiricalSamples) {
    let mut out = (EmpiricalSamples::default(), EmpiricalSamples::default());
    for (a, j) in items {
        out.0.extend(a);
        out.1.extend(j);
    }
    out
}

/// `(accel W1, jerk W1)` between the pooled OV samples of `logs` and the
/// reference samples.
pub fn kinematic_distances(
    logs: &[RolloutLog],
    reference: &(EmpiricalSamples, EmpiricalSamples),
) -> Result<(f64, f64)> {
    non_empty(logs, "kinematic_distances needs at least one log")?;
    let per_log: Vec<_> = logs.iter().map(log_kinematic_samples).collect();
    let generated = pool(&per_log);
    Ok((
        wasserstein1(&generated.0, &reference.0)?,
        wasserstein1(&generated.1, &reference.1)?,
    ))
}

/// Mean share of each AV route covered by the final AV position, in percent.
pub fn route_completion(logs: &[RolloutLog], routes: &[Option<Vec<Vec2>>]) -> Result<f64> {
    check_pairs(logs, routes)?;
    let mut total = 0.0;
    for (i, (log, route)) in logs.iter().zip(routes).enumerate() {
        let route = route
            .as_ref()
            .filter(|r| r.len() >= 2)
            .ok_or_else(|| Error::InvalidInput(format!("log {i} has no AV route")))?;
        let last = log
            .positions_of(&log.av_id)
            .and_then(|p| p.last().copied())
            .ok_or_else(|| Error::InvalidInput(format!("log {i} has no AV states")))?;
        let len = polyline_length(route);
        let share = if len > 0.0 {
            arc_progress(last, route) / len
        } else {
            1.0
        };
        total += (100.0 * share).clamp(0.0, 100.0);
    }
    Ok(total / logs.len() as f64)
}

pub fn report(
    logs: &[RolloutLog],
    maps: &[&MapModel],
    reference: &(EmpiricalSamples, EmpiricalSamples),
    routes: &[Option<Vec<Vec2>>],
) -> Result<MetricsReport> {
    let collision = collision_rate(logs)?;
    let (offroad, global) = offroad_rates(logs, maps)?;
    let inroad = inroad_and_collision_rate(logs, maps)?;
    let (accel_w1, jerk_w1) = kinematic_distances(logs, reference)?;
    let route = route_completion(logs, routes)?;
    let times: Vec<f64> = logs
        .iter()
        .flat_map(|l| l.generation_times.iter().copied())
        .collect();
    Ok(MetricsReport {
        n_scenarios: logs.len(),
        collision_rate: collision,
        offroad_rate: offroad,
        global_offroad_rate: global,
        inroad_and_collision_rate: inroad,
        inroad_share_of_collisions: (collision > 0.0).then(|| 100.0 * inroad / collision),
        accel_w1,
        jerk_w1,
        route_completion: route,
        mean_generation_time: (!times.is_empty())
            .then(|| times.iter().sum::<f64>() / times.len() as f64),
    })
}

/// Report for logs paired with the scenarios they were generated from; the
/// reference kinematics are the scenarios' own OV logs.
pub fn evaluate(logs: &[RolloutLog], scenarios: &[&Scenario]) -> Result<MetricsReport> {
    check_pairs(logs, scenarios)?;
    let maps: Vec<&MapModel> = scenarios.iter().map(|s| &s.map).collect();
    let refs: Vec<_> = scenarios
        .iter()
        .map(|s| reference_kinematic_samples(s))
        .collect();
    let routes: Vec<_> = scenarios.iter().map(|s| s.av_route()).collect();
    report(logs, &maps, &pool(&refs), &routes)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// "X (Y%)" with the in-road collision rate and its share of collisions.
    pub fn inroad_cell(&self) -> String {
        match self.inroad_share_of_collisions {
            Some(share) => format!("{:.1} ({:.1}%)", self.inroad_and_collision_rate, share),
            None => format!("{:.1} (-)", self.inroad_and_collision_rate),
        }
    }
}

const COLUMNS: [&str; 9] = [
    "",
    "Coll.",
    "Off Road",
    "Off Road (Global)",
    "In-Road & Coll.",
    "Accel. Dist.",
    "Jerk Dist.",
    "Time",
    "Route",
];

/// Aligned text table, one row per labelled report.
pub fn table(rows: &[(String, &MetricsReport)]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                format!("{:.1}", r.collision_rate),
                format!("{:.1}", r.offroad_rate),
                format!("{:.1}", r.global_offroad_rate),
                r.inroad_cell(),
                format!("{:.2}", r.accel_w1),
                format!("{:.2}", r.jerk_w1),
                r.mean_generation_time
                    .map_or("-".into(), |t| format!("{t:.3}s")),
                format!("{:.1}", r.route_completion),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].len())
                .chain([COLUMNS[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |row: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c == 0 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(COLUMNS.to_vec(), &mut out);
    for row in &cells {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
