//! Closed-loop rollout: AV estimation, intention search and OV planning at
//! each replanning tick, with reactive background traffic stepped every dt.

use crate::geometry::{OrientedBox, Vec2};
use crate::intention::{
    estimate_av_candidates, heuristic_intention, initial_state_from_history, search_intention,
    AdversarialIntention, AgentView, AvPlanner, AvSource, IntentionConfig, RulePlanner, SceneView,
    SearchStats,
};
use crate::kinematics::{heading_from_velocity, KinematicLimits};
use crate::planner::driver::{
    apply_command, av_rule_planner_step, bv_policy_step, desired_speed_from_history,
    neighbor_from_poses, DriverParams, Neighbor, VehicleState,
};
use crate::planner::{
    plan_learned, plan_quintic, LearnedPlannerWeights, PlanRequest, DEFAULT_LANE_SPEED,
};
use crate::prior::KinematicPrior;
use crate::scenario::{AgentState, Role, Scenario};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopMode {
    /// The AV replays its log whatever `planner` says.
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentionMode {
    Optimization,
    Heuristic,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvPlannerKind {
    Playback,
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OvPlannerKind {
    Quintic,
    Learned,
}

/// What the OV executes once an intention is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OvExecution {
    /// Goal-conditioned completion toward the intention's goal.
    Planner,
    /// The intention's own seed profile, unmodified.
    SeedProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BvPolicy {
    Reactive,
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub replan_hz: f64,
    /// Rollout length in seconds; `None` uses the scenario's future horizon.
    pub horizon: Option<f64>,
    pub mode: LoopMode,
    pub intention_mode: IntentionMode,
    pub planner: AvPlannerKind,
    pub ov_planner: OvPlannerKind,
    pub ov_execution: OvExecution,
    pub bv_policy: BvPolicy,
    pub seed: u64,
    pub lane_speed: f64,
    pub limits: KinematicLimits,
    pub intention: IntentionConfig,
    pub driver: DriverParams,
    pub prior: KinematicPrior,
    #[serde(skip)]
    pub learned_weights: Option<Arc<LearnedPlannerWeights>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replan_hz: 2.0,
            horizon: None,
            mode: LoopMode::ClosedLoop,
            intention_mode: IntentionMode::Optimization,
            planner: AvPlannerKind::Playback,
            ov_planner: OvPlannerKind::Quintic,
            ov_execution: OvExecution::Planner,
            bv_policy: BvPolicy::Reactive,
            seed: 0,
            lane_speed: DEFAULT_LANE_SPEED,
            limits: KinematicLimits::default(),
            intention: IntentionConfig::default(),
            driver: DriverParams::default(),
            prior: KinematicPrior::default(),
            learned_weights: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.replan_hz.is_finite() && self.replan_hz > 0.0) {
            return Err(Error::Config("sim.replan_hz must be positive".into()));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config("sim.horizon must be positive".into()));
            }
        }
        if !(self.lane_speed.is_finite() && self.lane_speed > 0.0) {
            return Err(Error::Config("sim.lane_speed must be positive".into()));
        }
        self.limits.validate().map_err(Error::Config)?;
        self.intention.validate()?;
        self.prior.validate()?;
        if self.ov_planner == OvPlannerKind::Learned && self.learned_weights.is_none() {
            return Err(Error::Config(
                "sim.ov_planner = learned needs a weight file".into(),
            ));
        }
        Ok(())
    }

    /// Replanning period in steps of `dt`.
    pub fn replan_period(&self, dt: f64) -> Result<usize> {
        let k = 1.0 / (self.replan_hz * dt);
        let r = k.round();
        if r < 1.0 || (k - r).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "replan period 1/{} s is not a multiple of dt = {dt}",
                self.replan_hz
            )));
        }
        Ok(r as usize)
    }

    fn av_is_playback(&self) -> bool {
        self.mode == LoopMode::OpenLoop || self.planner == AvPlannerKind::Playback
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Collision,
    HorizonEnd,
    AvOffroad,
    OvOffroad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub agents: BTreeMap<String, [f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    /// Index into `RolloutLog::steps`.
    pub step: usize,
    pub t: f64,
    pub other: String,
    pub av_position: [f64; 2],
}

/// Outcome of the intention search at one replanning tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionRecord {
    pub t: f64,
    pub found: bool,
    pub goal: Option<[f64; 2]>,
    /// Steps after the tick at which the collision is intended.
    pub collision_step: Option<usize>,
    pub objective: Option<f64>,
    pub av_candidate: Option<AvSource>,
    pub corridor: Vec<usize>,
    pub stats: SearchStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutLog {
    pub dt: f64,
    pub av_id: String,
    pub ov_id: Option<String>,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub collision: Option<CollisionRecord>,
    /// No intention was ever found; the OV followed its log.
    pub degraded: bool,
    pub intentions: Vec<IntentionRecord>,
    /// OV positions planned after the last logged step at the final tick.
    pub ov_plan_tail: Vec<[f64; 2]>,
    /// Wall-clock seconds of AV estimation, intention search and OV planning
    /// per replanning tick.
    pub generation_times: Vec<f64>,
}

/// Equality ignores wall-clock timings.
impl PartialEq for RolloutLog {
    fn eq(&self, o: &Self) -> bool {
        self.dt == o.dt
            && self.av_id == o.av_id
            && self.ov_id == o.ov_id
            && self.seed == o.seed
            && self.steps == o.steps
            && self.termination == o.termination
            && self.collision == o.collision
            && self.degraded == o.degraded
            && self.intentions == o.intentions
            && self.ov_plan_tail == o.ov_plan_tail
            && self.generation_times.len() == o.generation_times.len()
    }
}

#[derive(Serialize, Deserialize)]
struct Footer {
    footer: FooterBody,
}

#[derive(Serialize, Deserialize)]
struct FooterBody {
    dt: f64,
    av_id: String,
    ov_id: Option<String>,
    seed: u64,
    termination: Termination,
    collision: Option<CollisionRecord>,
    degraded: bool,
    intentions: Vec<IntentionRecord>,
    ov_plan_tail: Vec<[f64; 2]>,
    generation_times: Vec<f64>,
}

impl RolloutLog {
    /// Time-zero index of `steps`.
    pub fn current_index(&self) -> usize {
        self.steps.iter().position(|s| s.t >= -1e-9).unwrap_or(0)
    }

    pub fn positions_of(&self, id: &str) -> Option<Vec<Vec2>> {
        self.steps
            .iter()
            .map(|s| s.agents.get(id).map(|p| Vec2::new(p[0], p[1])))
            .collect()
    }

    pub fn poses_of(&self, id: &str) -> Option<Vec<AgentState>> {
        self.steps
            .iter()
            .map(|s| s.agents.get(id).map(|p| AgentState::new(p[0], p[1], p[2])))
            .collect()
    }

    pub fn mean_generation_time(&self) -> Option<f64> {
        (!self.generation_times.is_empty())
            .then(|| self.generation_times.iter().sum::<f64>() / self.generation_times.len() as f64)
    }

    /// One JSON object per step followed by a footer object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step record serializes"));
            out.push('\n');
        }
        let footer = Footer {
            footer: FooterBody {
                dt: self.dt,
                av_id: self.av_id.clone(),
                ov_id: self.ov_id.clone(),
                seed: self.seed,
                termination: self.termination,
                collision: self.collision.clone(),
                degraded: self.degraded,
                intentions: self.intentions.clone(),
                ov_plan_tail: self.ov_plan_tail.clone(),
                generation_times: self.generation_times.clone(),
            },
        };
        out.push_str(&serde_json::to_string(&footer).expect("footer serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (last, body) = lines
            .split_last()
            .ok_or(Error::Empty("rollout log has no records"))?;
        let f: Footer = serde_json::from_str(last)?;
        let steps = body
            .iter()
            .map(|l| serde_json::from_str::<StepRecord>(l))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if steps.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidInput(
                "rollout log timestamps are not strictly increasing".into(),
            ));
        }
        let f = f.footer;
        Ok(Self {
            dt: f.dt,
            av_id: f.av_id,
            ov_id: f.ov_id,
            seed: f.seed,
            steps,
            termination: f.termination,
            collision: f.collision,
            degraded: f.degraded,
            intentions: f.intentions,
            ov_plan_tail: f.ov_plan_tail,
            generation_times: f.generation_times,
        })
    }
}

/// Seed for item `index` of a stream derived from `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Control {
    Replay,
    Driver {
        state: VehicleState,
        route: Vec<Vec2>,
        width: f64,
        /// Lane followed by a background vehicle.
        lane: Option<usize>,
        params: DriverParams,
    },
}

/// Raw logged pose at absolute index `i`, extended at constant velocity past
/// the end of the log.
fn raw_pose(states: &[AgentState], i: usize, dt: f64) -> AgentState {
    if i < states.len() {
        return states[i];
    }
    let n = states.len();
    let last = states[n - 1];
    let v = if n >= 2 {
        (last.position() - states[n - 2].position()) / dt
    } else {
        Vec2::zeros()
    };
    AgentState::from_position(
        last.position() + v * ((i - (n - 1)) as f64 * dt),
        last.heading,
    )
}

fn pose_array(s: &AgentState) -> [f64; 3] {
    [s.x, s.y, s.heading]
}

/// OV plan over the remaining horizon: positions for steps `1..` after the
/// tick at which it was made.
fn ov_plan(
    intention: &AdversarialIntention,
    ov: &AgentView,
    scene: &SceneView,
    config: &SimConfig,
) -> Result<Vec<Vec2>> {
    let remaining = scene.horizon;
    if config.ov_execution == OvExecution::SeedProfile {
        return Ok(intention.seed_profile.p[1..]
            .iter()
            .copied()
            .take(remaining)
            .collect());
    }
    let init = initial_state_from_history(&ov.history, scene.dt);
    let steps = intention.collision_step.clamp(1, remaining);
    let req = PlanRequest::toward(
        scene.map,
        init,
        intention.goal,
        steps,
        scene.dt,
        config.limits,
        config.lane_speed,
    );
    let profile = match (config.ov_planner, &config.learned_weights) {
        (OvPlannerKind::Learned, Some(w)) => plan_learned(&req, w)?,
        _ => plan_quintic(&req)?.profile,
    };
    let mut out: Vec<Vec2> = profile.p[1..].to_vec();
    // Past the goal the OV keeps its terminal velocity.
    let last = *profile.p.last().unwrap();
    let vt = req.terminal_velocity;
    for k in 1..=remaining.saturating_sub(out.len()) {
        out.push(last + vt * (k as f64 * scene.dt));
    }
    Ok(out)
}

/// Runs one rollout. The scenario's history is copied into the log; the
/// simulated part starts at time zero.
pub fn run_scenario(scenario: &Scenario, config: &SimConfig) -> Result<RolloutLog> {
    config.validate()?;
    scenario.validate()?;
    let dt = scenario.dt;
    let period = config.replan_period(dt)?;
    let cur = scenario.current_index();
    let total = match config.horizon {
        Some(h) => ((h / dt).round() as usize).min(scenario.future_steps()),
        None => scenario.future_steps(),
    };
    let av_idx = scenario.av_index();
    let ov_idx = scenario.index_of(Role::Ov);
    let n_agents = scenario.agents.len();
    let map = &scenario.map;

    // states[a][i]: pose of agent a at absolute index i.
    let mut states: Vec<Vec<AgentState>> = scenario
        .agents
        .iter()
        .map(|a| a.trajectory.states[..=cur].to_vec())
        .collect();

    let mut controls: Vec<Control> = Vec::with_capacity(n_agents);
    for (i, a) in scenario.agents.iter().enumerate() {
        let hist = &states[i];
        let n = hist.len();
        let speed = if n >= 2 {
            (hist[n - 1].position() - hist[n - 2].position()).norm() / dt
        } else {
            0.0
        };
        let state = VehicleState {
            pose: hist[n - 1],
            speed,
        };
        let desired = desired_speed_from_history(hist, dt)
            .unwrap_or(config.driver.desired_speed)
            .max(1.0);
        let params = DriverParams {
            desired_speed: desired,
            ..config.driver
        };
        let control = match a.role {
            Role::Av if !config.av_is_playback() => match RulePlanner::route(map, &hist[n - 1]) {
                Some((route, width)) => Control::Driver {
                    state,
                    route,
                    width,
                    lane: None,
                    params,
                },
                None => return Err(Error::InvalidInput("AV is not near any lane".into())),
            },
            Role::Bv if config.bv_policy == BvPolicy::Reactive => {
                let lane = map
                    .lane_for_pose(&hist[n - 1])
                    .or_else(|| map.nearest_lane(hist[n - 1].position()).map(|(l, _)| l));
                match lane {
                    Some(l) => Control::Driver {
                        state,
                        route: Vec::new(),
                        width: map.lanes[l].width,
                        lane: Some(l),
                        params,
                    },
                    None => Control::Replay,
                }
            }
            _ => Control::Replay,
        };
        controls.push(control);
    }

    let planner = RulePlanner {
        params: config.driver,
        limits: config.limits,
        ..RulePlanner::default()
    };
    let mut intentions = Vec::new();
    let mut generation_times = Vec::new();
    // OV plan: absolute index of its first position and the positions.
    let mut plan: Option<(usize, Vec<Vec2>)> = None;
    let mut termination = Termination::HorizonEnd;
    let mut collision = None;

    for k in 0..total {
        let i = cur + k;
        if k % period == 0 && config.intention_mode != IntentionMode::None && ov_idx.is_some() {
            let started = Instant::now();
            let scene = SceneView {
                map,
                dt,
                horizon: total - k,
                agents: scenario
                    .agents
                    .iter()
                    .zip(&states)
                    .map(|(a, s)| AgentView {
                        id: a.id.clone(),
                        role: a.role,
                        length: a.length,
                        width: a.width,
                        history: s.clone(),
                        future: a
                            .trajectory
                            .states
                            .get(i + 1..)
                            .map(<[_]>::to_vec)
                            .unwrap_or_default(),
                    })
                    .collect(),
            };
            let tick_seed = derive_seed(config.seed, k as u64);
            let av_planner: Option<&dyn AvPlanner> = Some(&planner);
            let candidates = estimate_av_candidates(
                &scene,
                av_planner,
                config.intention.k_av_candidates,
                tick_seed,
            );
            let (found, stats) = match config.intention_mode {
                IntentionMode::Optimization => search_intention(
                    &scene,
                    &candidates,
                    &config.prior,
                    &config.limits,
                    &config.intention,
                ),
                _ => (
                    heuristic_intention(&scene, &candidates[0], tick_seed),
                    SearchStats::default(),
                ),
            };
            let ov = scene.ov().expect("scene has an OV");
            let record = IntentionRecord {
                t: k as f64 * dt,
                found: found.is_some(),
                goal: found.as_ref().map(|f| [f.goal.x, f.goal.y]),
                collision_step: found.as_ref().map(|f| f.collision_step),
                objective: found
                    .as_ref()
                    .map(|f| f.objective_value)
                    .filter(|v| v.is_finite()),
                av_candidate: found.as_ref().map(|f| f.av_candidate),
                corridor: found
                    .as_ref()
                    .map(|f| f.corridor.clone())
                    .unwrap_or_default(),
                stats,
            };
            if let Some(f) = &found {
                match ov_plan(f, ov, &scene, config) {
                    Ok(p) => plan = Some((i + 1, p)),
                    Err(e) => log::warn!(
                        "OV planning failed at t = {:.2}: {e}; holding previous plan",
                        k as f64 * dt
                    ),
                }
            }
            generation_times.push(started.elapsed().as_secs_f64());
            intentions.push(record);
        }

        let mut next: Vec<AgentState> = Vec::with_capacity(n_agents);
        for (a, agent) in scenario.agents.iter().enumerate() {
            let pose = if Some(a) == ov_idx && plan.is_some() {
                let (start, p) = plan.as_ref().unwrap();
                let pos = p.get(i + 1 - start).copied().unwrap_or_else(|| {
                    raw_pose(&[states[a][i - 1], states[a][i]], 2, dt).position()
                });
                let heading = heading_from_velocity(
                    (pos - states[a][i].position()) / dt,
                    states[a][i].heading,
                );
                AgentState::from_position(pos, heading)
            } else {
                match &mut controls[a] {
                    Control::Replay => raw_pose(&agent.trajectory.states, i + 1, dt),
                    Control::Driver {
                        state,
                        route,
                        width,
                        lane,
                        params,
                    } => {
                        let neighbors: Vec<Neighbor> = (0..n_agents)
                            .filter(|&b| b != a)
                            .map(|b| {
                                let o = &scenario.agents[b];
                                neighbor_from_poses(
                                    &states[b][i - 1],
                                    &states[b][i],
                                    o.length,
                                    o.width,
                                    dt,
                                )
                            })
                            .collect();
                        let cmd = match lane {
                            Some(l) => bv_policy_step(
                                state,
                                agent.length,
                                &map.lanes[*l],
                                &neighbors,
                                params,
                                &config.limits,
                            ),
                            None => av_rule_planner_step(
                                state,
                                agent.length,
                                route,
                                *width,
                                &neighbors,
                                params,
                                &config.limits,
                            ),
                        };
                        *state = apply_command(state, &cmd, dt, &config.limits);
                        state.pose
                    }
                }
            };
            next.push(pose);
        }
        for (a, pose) in next.into_iter().enumerate() {
            states[a].push(pose);
        }

        let av = &scenario.agents[av_idx];
        let av_pose = states[av_idx][i + 1];
        let av_box = av.footprint_at(&av_pose);
        let hit = scenario.agents.iter().enumerate().find(|(b, o)| {
            *b != av_idx
                && av_box.overlaps(&OrientedBox::new(
                    states[*b][i + 1].position(),
                    states[*b][i + 1].heading,
                    o.length,
                    o.width,
                ))
        });
        if let Some((_, o)) = hit {
            termination = Termination::Collision;
            collision = Some(CollisionRecord {
                step: i + 1,
                t: (k + 1) as f64 * dt,
                other: o.id.clone(),
                av_position: [av_pose.x, av_pose.y],
            });
            break;
        }
        if map.d_margin(av_pose.position()) < 0.0 {
            termination = Termination::AvOffroad;
            break;
        }
    }

    let last = states[av_idx].len() - 1;
    let degraded =
        config.intention_mode != IntentionMode::None && ov_idx.is_some() && plan.is_none();
    let ov_plan_tail: Vec<[f64; 2]> = match ov_idx {
        Some(o) => match &plan {
            Some((start, p)) => p
                .iter()
                .skip(last + 1 - start)
                .map(|q| [q.x, q.y])
                .collect(),
            None => (last + 1..=cur + total)
                .map(|j| {
                    let s = raw_pose(&scenario.agents[o].trajectory.states, j, dt);
                    [s.x, s.y]
                })
                .collect(),
        },
        None => Vec::new(),
    };
    let steps = (0..=last)
        .map(|j| StepRecord {
            t: (j as f64 - cur as f64) * dt,
            agents: scenario
                .agents
                .iter()
                .zip(&states)
                .map(|(a, s)| (a.id.clone(), pose_array(&s[j])))
                .collect(),
        })
        .collect();
    Ok(RolloutLog {
        dt,
        av_id: scenario.av().id.clone(),
        ov_id: ov_idx.map(|o| scenario.agents[o].id.clone()),
        seed: config.seed,
        steps,
        termination,
        collision,
        degraded,
        intentions,
        ov_plan_tail,
        generation_times,
    })
}

/// Runs every scenario with seed `derive_seed(config.seed, index)`; results
/// keep input order and failures stay in their slot.
pub fn batch_run(
    scenarios: &[Scenario],
    config: &SimConfig,
) -> Vec<std::result::Result<RolloutLog, String>> {
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let cfg = SimConfig {
                seed: derive_seed(config.seed, i as u64),
                ..config.clone()
            };
            run_scenario(s, &cfg).map_err(|e| e.to_string())
        })
        .collect()
}
