//! Adversarial intention search: an outer enumeration over AV trajectory
//! candidates, collision steps and lane corridors around the convex jerk
//! problem of [`crate::qp`].

use crate::geometry::{project_onto_polyline, unit_from_angle, Vec2};
use crate::kinematics::{
    check_limits_with_slack, ControlProfile, InitialState, KinematicLimits, LimitKind,
};
use crate::planner::driver::{
    apply_command, av_rule_planner_step, desired_speed_from_history, neighbor_from_poses,
    DriverParams, VehicleState,
};
use crate::prior::KinematicPrior;
use crate::qp::{
    solve_warm, Constraint, ConvexSet, Halfspace, InnerProblem, QuadraticObjective, Quantity,
    SolveStatus, SolverSettings, TerminalBall, TerminalLowerBound, WarmStart,
};
use crate::scenario::{AgentState, MapModel, Role, Scenario, Trajectory};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Inward margin applied to corridor halfspaces (m).
const CORRIDOR_MARGIN: f64 = 0.01;
/// Tolerances of the independent post-check.
pub const LIMIT_SLACK: f64 = 1e-4;
pub const MARGIN_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntentionConfig {
    pub k_av_candidates: usize,
    pub max_corridors: usize,
    pub t_min_seconds: f64,
    /// Stop the search once a feasible solution reaches this mean log-density.
    pub good_enough_objective: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Budget of convex solves per search, repairs included.
    pub max_solves: usize,
}

impl Default for IntentionConfig {
    fn default() -> Self {
        Self {
            k_av_candidates: 3,
            max_corridors: 4,
            t_min_seconds: 0.5,
            good_enough_objective: None,
            tol: 1e-5,
            max_iter: 5000,
            max_solves: 32,
        }
    }
}

impl IntentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_av_candidates == 0 {
            return Err(Error::Config(
                "intention.k_av_candidates must be at least 1".into(),
            ));
        }
        if self.max_corridors == 0 {
            return Err(Error::Config(
                "intention.max_corridors must be at least 1".into(),
            ));
        }
        if !(self.t_min_seconds >= 0.0
            && self.tol > 0.0
            && self.max_iter > 0
            && self.max_solves > 0)
        {
            return Err(Error::Config(
                "intention.t_min_seconds, tol, max_iter and max_solves must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverSettings::default()
        }
    }

    pub fn t_min_steps(&self, dt: f64) -> usize {
        ((self.t_min_seconds / dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// One agent as seen at a replanning instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub id: String,
    pub role: Role,
    pub length: f64,
    pub width: f64,
    /// Poses up to and including the present.
    pub history: Vec<AgentState>,
    /// Logged poses after the present in the unmodified scene.
    pub future: Vec<AgentState>,
}

impl AgentView {
    pub fn current(&self) -> &AgentState {
        self.history.last().expect("agent view has a present pose")
    }

    /// Logged future of `steps` poses after the present, extended at constant
    /// velocity when the log is shorter.
    pub fn future_padded(&self, steps: usize, dt: f64) -> Vec<AgentState> {
        let mut out: Vec<AgentState> = self.future.iter().take(steps).copied().collect();
        let mut tail: Vec<AgentState> = self.history.iter().rev().take(2).rev().copied().collect();
        tail.extend(out.iter().copied());
        let vel = if tail.len() >= 2 {
            let n = tail.len();
            (tail[n - 1].position() - tail[n - 2].position()) / dt
        } else {
            Vec2::zeros()
        };
        let mut last = *tail.last().unwrap();
        while out.len() < steps {
            last = AgentState::from_position(last.position() + vel * dt, last.heading);
            out.push(last);
        }
        out
    }
}

/// Snapshot of a scene at a replanning instant.
#[derive(Debug, Clone)]
pub struct SceneView<'a> {
    pub map: &'a MapModel,
    pub dt: f64,
    /// Steps remaining until the end of the planning horizon.
    pub horizon: usize,
    pub agents: Vec<AgentView>,
}

impl<'a> SceneView<'a> {
    /// View at the scenario's present (index `current_index()`).
    pub fn from_scenario(scenario: &'a Scenario) -> Self {
        let cur = scenario.current_index();
        Self {
            map: &scenario.map,
            dt: scenario.dt,
            horizon: scenario.future_steps(),
            agents: scenario
                .agents
                .iter()
                .map(|a| AgentView {
                    id: a.id.clone(),
                    role: a.role,
                    length: a.length,
                    width: a.width,
                    history: a.trajectory.states[..=cur.min(a.trajectory.len() - 1)].to_vec(),
                    future: a
                        .trajectory
                        .states
                        .get(cur + 1..)
                        .map(<[_]>::to_vec)
                        .unwrap_or_default(),
                })
                .collect(),
        }
    }

    pub fn av(&self) -> &AgentView {
        self.agents
            .iter()
            .find(|a| a.role == Role::Av)
            .expect("scene has an AV")
    }

    pub fn ov(&self) -> Option<&AgentView> {
        self.agents.iter().find(|a| a.role == Role::Ov)
    }
}

/// Initial state from the last three poses: backward differences for velocity
/// and acceleration.
pub fn initial_state_from_history(history: &[AgentState], dt: f64) -> InitialState {
    let n = history.len();
    let p = |k: usize| history[k].position();
    let cur = history[n - 1];
    let v = if n >= 2 {
        (p(n - 1) - p(n - 2)) / dt
    } else {
        Vec2::zeros()
    };
    let a = if n >= 3 {
        (p(n - 1) - p(n - 2) * 2.0 + p(n - 3)) / (dt * dt)
    } else {
        Vec2::zeros()
    };
    InitialState {
        p: cur.position(),
        v,
        a,
        heading: cur.heading,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvSource {
    Playback,
    ConstantVelocity,
    RulePlanner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvCandidate {
    /// Poses at steps `0..=horizon`, starting at the present.
    pub trajectory: Trajectory,
    pub source: AvSource,
    pub weight: f64,
}

impl AvCandidate {
    pub fn position(&self, step: usize) -> Vec2 {
        let s = &self.trajectory.states;
        s[step.min(s.len() - 1)].position()
    }
}

/// Black-box AV planner rolled out in the unmodified scene.
pub trait AvPlanner: Sync {
    /// Poses for steps `0..=steps`. `variant` 0 is the nominal rollout; other
    /// variants may perturb the planner using `rng`.
    fn rollout(
        &self,
        view: &SceneView,
        steps: usize,
        variant: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<AgentState>>;
}

/// Car-following, lane-keeping AV that tracks its current lane.
#[derive(Debug, Clone, PartialEq)]
pub struct RulePlanner {
    pub params: DriverParams,
    pub limits: KinematicLimits,
    /// Relative spread of the desired speed across rollout variants.
    pub speed_jitter: f64,
}

impl Default for RulePlanner {
    fn default() -> Self {
        Self {
            params: DriverParams::default(),
            limits: KinematicLimits::default(),
            speed_jitter: 0.2,
        }
    }
}

impl RulePlanner {
    /// Route along the lane the AV is driving in, from its projection onward.
    pub fn route(map: &MapModel, pose: &AgentState) -> Option<(Vec<Vec2>, f64)> {
        let lane = map
            .lane_for_pose(pose)
            .or_else(|| map.nearest_lane(pose.position()).map(|(i, _)| i))?;
        let l = &map.lanes[lane];
        Some((l.route_from(pose.position()), l.width))
    }
}

impl AvPlanner for RulePlanner {
    fn rollout(
        &self,
        view: &SceneView,
        steps: usize,
        variant: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<AgentState>> {
        let av = view.av();
        let (route, width) = RulePlanner::route(view.map, av.current())
            .ok_or_else(|| Error::InvalidInput("AV is not near any lane".into()))?;
        let base =
            desired_speed_from_history(&av.history, view.dt).unwrap_or(self.params.desired_speed);
        let factor = if variant == 0 {
            1.0
        } else {
            1.0 + rng.random_range(-self.speed_jitter..=self.speed_jitter)
        };
        let params = DriverParams {
            desired_speed: (base * factor).max(1.0),
            ..self.params
        };
        let others: Vec<(&AgentView, Vec<AgentState>)> = view
            .agents
            .iter()
            .filter(|a| a.role != Role::Av)
            .map(|a| {
                let mut poses = vec![*a.current()];
                poses.extend(a.future_padded(steps, view.dt));
                (a, poses)
            })
            .collect();
        let prev_of = |a: &AgentView| {
            a.history
                .iter()
                .rev()
                .nth(1)
                .copied()
                .unwrap_or(*a.current())
        };
        let n = av.history.len();
        let speed = if n >= 2 {
            (av.history[n - 1].position() - av.history[n - 2].position()).norm() / view.dt
        } else {
            0.0
        };
        let mut state = VehicleState {
            pose: *av.current(),
            speed,
        };
        let mut out = vec![state.pose];
        for k in 0..steps {
            let neighbors: Vec<_> = others
                .iter()
                .map(|(a, poses)| {
                    let prev = if k == 0 { prev_of(a) } else { poses[k - 1] };
                    neighbor_from_poses(&prev, &poses[k], a.length, a.width, view.dt)
                })
                .collect();
            let cmd = av_rule_planner_step(
                &state,
                av.length,
                &route,
                width,
                &neighbors,
                &params,
                &self.limits,
            );
            state = apply_command(&state, &cmd, view.dt, &self.limits);
            out.push(state.pose);
        }
        Ok(out)
    }
}

fn candidate_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Up to `k` AV trajectory candidates over the view's horizon: playback,
/// constant velocity, then planner rollouts. Near-duplicates are dropped;
/// playback is always present.
pub fn estimate_av_candidates(
    view: &SceneView,
    planner: Option<&dyn AvPlanner>,
    k: usize,
    seed: u64,
) -> Vec<AvCandidate> {
    let av = view.av();
    let steps = view.horizon;
    let dt = view.dt;
    let mut raw: Vec<(Vec<AgentState>, AvSource)> = Vec::new();
    let mut playback = vec![*av.current()];
    playback.extend(av.future_padded(steps, dt));
    raw.push((playback, AvSource::Playback));
    if k >= 2 {
        let init = initial_state_from_history(&av.history, dt);
        let cv = (0..=steps)
            .map(|s| {
                AgentState::from_position(init.p + init.v * (s as f64 * dt), av.current().heading)
            })
            .collect();
        raw.push((cv, AvSource::ConstantVelocity));
    }
    if let Some(planner) = planner {
        for variant in 0..k.saturating_sub(2) {
            let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(seed, variant));
            match planner.rollout(view, steps, variant, &mut rng) {
                Ok(poses)
                    if poses.len() == steps + 1 && poses.iter().all(AgentState::is_finite) =>
                {
                    raw.push((poses, AvSource::RulePlanner))
                }
                Ok(_) => log::warn!(
                    "AV planner rollout {variant} returned a malformed trajectory; dropped"
                ),
                Err(e) => log::warn!("AV planner rollout {variant} failed: {e}; dropped"),
            }
        }
    }
    let mut kept: Vec<(Vec<AgentState>, AvSource)> = Vec::new();
    for (poses, source) in raw {
        let dup = kept.iter().any(|(q, _)| {
            q.iter()
                .zip(&poses)
                .all(|(a, b)| (a.position() - b.position()).norm() < 1e-6)
        });
        if !dup {
            kept.push((poses, source));
        }
    }
    kept.truncate(k);
    let w = 1.0 / kept.len() as f64;
    kept.into_iter()
        .map(|(states, source)| AvCandidate {
            trajectory: Trajectory::new(dt, 0.0, states),
            source,
            weight: w,
        })
        .collect()
}

/// Lane-following corridor converted to per-step slabs on the position.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub lanes: Vec<usize>,
    /// `slabs[t - 1]` constrains the position at step `t`; empty when the
    /// corridor is unconstrained.
    pub slabs: Vec<[Halfspace; 2]>,
}

impl Corridor {
    pub fn unconstrained() -> Self {
        Self {
            lanes: Vec::new(),
            slabs: Vec::new(),
        }
    }

    pub fn halfspaces(&self) -> Vec<(usize, Halfspace)> {
        self.slabs
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.iter().map(move |h| (i + 1, *h)))
            .collect()
    }

    /// Whether a ball intersects the slab at `step`.
    pub fn admits_ball(&self, step: usize, center: Vec2, radius: f64) -> bool {
        match self.slabs.get(step.wrapping_sub(1)) {
            Some(slab) => slab
                .iter()
                .all(|h| h.normal.dot(&center) - h.offset <= radius),
            None => true,
        }
    }

    pub fn contains(&self, step: usize, p: Vec2, tol: f64) -> bool {
        match self.slabs.get(step.wrapping_sub(1)) {
            Some(slab) => slab.iter().all(|h| h.violation(p) <= tol),
            None => true,
        }
    }
}

/// Lateral position of `other`'s centerline relative to `own` at `p`, when
/// the two lanes run parallel side by side there.
fn side_offset(map: &MapModel, own: usize, other: usize, p: Vec2) -> Option<f64> {
    let lo = &map.lanes[own];
    let lt = &map.lanes[other];
    let po = lo.project(p);
    let pt = lt.project(po.point);
    if pt.tangent.dot(&po.tangent).abs() < 0.95 {
        return None;
    }
    let normal = Vec2::new(-po.tangent.y, po.tangent.x);
    let offset = (pt.point - po.point).dot(&normal);
    let expected = 0.5 * (lo.width + lt.width);
    let along = (pt.point - po.point).dot(&po.tangent).abs();
    ((offset.abs() - expected).abs() < 0.5 && along < 0.5).then_some(offset)
}

fn build_slabs(
    map: &MapModel,
    path: &[Vec2],
    own_width: f64,
    extra: &[usize],
    reference: &[Vec2],
) -> Vec<[Halfspace; 2]> {
    reference
        .iter()
        .map(|r| {
            let proj = project_onto_polyline(*r, path);
            let c = proj.point;
            let n = Vec2::new(-proj.tangent.y, proj.tangent.x);
            let (mut lo, mut hi) = (-0.5 * own_width, 0.5 * own_width);
            for &e in extra {
                let lane = &map.lanes[e];
                let pe = lane.project(c);
                let o = (pe.point - c).dot(&n);
                lo = lo.min(o - 0.5 * lane.width);
                hi = hi.max(o + 0.5 * lane.width);
            }
            let base = n.dot(&c);
            [
                Halfspace::new(n, base + hi - CORRIDOR_MARGIN),
                Halfspace::new(-n, -(base + lo) + CORRIDOR_MARGIN),
            ]
        })
        .collect()
}

/// Corridors reachable from the OV's lane: the lane itself, its union with
/// each side neighbour, and its continuation into each successor. Slabs are
/// linearized at the projection of `reference[t - 1]`; corridors are ordered
/// by distance to `av_path` and truncated to `max_corridors`.
pub fn enumerate_corridors(
    map: &MapModel,
    ov_pose: &AgentState,
    reference: &[Vec2],
    av_path: &[Vec2],
    max_corridors: usize,
) -> Vec<Corridor> {
    let Some(own) = map.lane_for_pose(ov_pose) else {
        log::debug!("OV is not on any lane; using an unconstrained corridor");
        return vec![Corridor::unconstrained()];
    };
    let own_lane = &map.lanes[own];
    let p = ov_pose.position();
    let mut sets: Vec<(Vec<usize>, Vec<Vec2>, Vec<usize>)> = Vec::new();
    sets.push((vec![own], own_lane.centerline().to_vec(), Vec::new()));
    let mut sides: Vec<(usize, f64)> = (0..map.lanes.len())
        .filter(|&i| i != own)
        .filter_map(|i| side_offset(map, own, i, p).map(|o| (i, o)))
        .collect();
    sides.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (i, _) in &sides {
        sets.push((vec![own, *i], own_lane.centerline().to_vec(), vec![*i]));
    }
    for s in map.successors(own) {
        let mut path = own_lane.centerline().to_vec();
        for q in map.lanes[s].centerline() {
            if (q - path[path.len() - 1]).norm() > 1e-9 {
                path.push(*q);
            }
        }
        sets.push((vec![own, s], path, Vec::new()));
    }
    let distance = |lanes: &[usize]| {
        av_path
            .iter()
            .map(|q| {
                lanes
                    .iter()
                    .map(|&l| {
                        (map.lanes[l].project(*q).distance - 0.5 * map.lanes[l].width).max(0.0)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut corridors: Vec<(f64, usize, Corridor)> = sets
        .into_iter()
        .enumerate()
        .map(|(i, (lanes, path, extra))| {
            let d = distance(&lanes);
            let slabs = build_slabs(map, &path, own_lane.width, &extra, reference);
            (d, i, Corridor { lanes, slabs })
        })
        .collect();
    corridors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    corridors
        .into_iter()
        .take(max_corridors)
        .map(|c| c.2)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialIntention {
    pub goal: Vec2,
    pub collision_step: usize,
    pub seed_profile: ControlProfile,
    /// Mean log-density of the seed profile under the prior; NaN for the
    /// heuristic baseline, which is not scored.
    pub objective_value: f64,
    pub av_candidate: AvSource,
    pub av_index: usize,
    /// AV candidate position at the collision step.
    pub collision_center: Vec2,
    pub corridor: Vec<usize>,
}

/// First failed check of an intention profile.
#[derive(Debug, Clone, PartialEq)]
pub enum Breach {
    Integrator(f64),
    Limit(LimitKind, usize, f64),
    Offroad(usize, f64),
    Terminal(f64),
}

/// Independent check of a profile against every constraint of the intention
/// problem: integrator identities, kinematic limits with `LIMIT_SLACK`,
/// drivable margin down to `-MARGIN_SLACK`, and the collision ball.
pub fn verify_profile(
    profile: &ControlProfile,
    map: &MapModel,
    limits: &KinematicLimits,
    collision_step: usize,
    center: Vec2,
) -> std::result::Result<(), Breach> {
    let res = profile.integrator_residual();
    if res > 1e-9 {
        return Err(Breach::Integrator(res));
    }
    if let Some(v) = check_limits_with_slack(profile, limits, LIMIT_SLACK).first() {
        return Err(Breach::Limit(v.kind, v.step, v.magnitude));
    }
    for (t, p) in profile.p.iter().enumerate().skip(1) {
        let m = map.d_margin(*p);
        if m < -MARGIN_SLACK {
            return Err(Breach::Offroad(t, m));
        }
    }
    let d = (profile.p[collision_step] - center).norm();
    if d > limits.d_thres + LIMIT_SLACK {
        return Err(Breach::Terminal(d));
    }
    Ok(())
}

/// Whether a forward-moving profile within the limits can bring the position
/// at `step` within `radius` of `center`.
pub fn reachable(
    init: &InitialState,
    step: usize,
    dt: f64,
    limits: &KinematicLimits,
    center: Vec2,
    radius: f64,
) -> bool {
    if step == 0 {
        return (init.p - center).norm() <= radius;
    }
    let first = init.p + init.v * dt + init.a * (0.5 * dt * dt);
    // Without reversing, progress along the heading never drops much below
    // the first, already determined, position.
    if (center - first).dot(&unit_from_angle(init.heading)) < -(radius + limits.v_max * dt) {
        return false;
    }
    let spread = (step - 1) as f64 * (limits.v_max * dt + 0.5 * limits.a_max * dt * dt);
    (first - center).norm() - radius <= spread
}

/// Bookkeeping of one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub considered: usize,
    pub solved: usize,
    pub repaired: usize,
}

struct Entry {
    bound: f64,
    step: usize,
    cand: usize,
    corridor: usize,
}

struct Best {
    cost: f64,
    key: (usize, usize, usize),
    profile: ControlProfile,
}

/// Searches (AV candidate x collision step x corridor) for the most probable
/// OV profile under the prior that reaches the collision ball, using the
/// terminal-ball relaxation as a lower bound to prune.
pub fn search_intention(
    view: &SceneView,
    candidates: &[AvCandidate],
    prior: &KinematicPrior,
    limits: &KinematicLimits,
    config: &IntentionConfig,
) -> (Option<AdversarialIntention>, SearchStats) {
    let mut stats = SearchStats::default();
    let Some(ov) = view.ov() else {
        return (None, stats);
    };
    if ov.history.len() < 2 || candidates.is_empty() {
        return (None, stats);
    }
    let dt = view.dt;
    let horizon = view.horizon;
    let t_min = config.t_min_steps(dt);
    if horizon < t_min {
        return (None, stats);
    }
    let init = initial_state_from_history(&ov.history, dt);
    let objective = QuadraticObjective::from_prior(prior);
    let lb = TerminalLowerBound::new(&init, horizon, dt, &objective);
    let reference: Vec<Vec2> = (1..=horizon)
        .map(|t| lb.unconstrained_position(t))
        .collect();
    let av_path: Vec<Vec2> = candidates[0].trajectory.positions();
    let corridors = enumerate_corridors(
        view.map,
        ov.current(),
        &reference,
        &av_path,
        config.max_corridors,
    );
    let radius = limits.d_thres;

    let mut entries = Vec::new();
    for (ci, cand) in candidates.iter().enumerate() {
        for step in t_min..=horizon {
            let center = cand.position(step);
            if !reachable(&init, step, dt, limits, center, radius) {
                continue;
            }
            let bound = lb.bound(step, center, radius);
            if !bound.is_finite() {
                continue;
            }
            for (k, corr) in corridors.iter().enumerate() {
                if corr.admits_ball(step, center, radius) {
                    entries.push(Entry {
                        bound,
                        step,
                        cand: ci,
                        corridor: k,
                    });
                }
            }
        }
    }
    stats.considered = entries.len();
    entries.sort_by(|a, b| {
        a.bound
            .total_cmp(&b.bound)
            .then(a.step.cmp(&b.step))
            .then(a.cand.cmp(&b.cand))
            .then(a.corridor.cmp(&b.corridor))
    });

    // No reversing: velocity keeps a non-negative component along the
    // initial heading.
    let back = -unit_from_angle(init.heading);
    let forward: Vec<Constraint> = (2..=horizon)
        .map(|step| Constraint {
            quantity: Quantity::Velocity,
            step,
            set: ConvexSet::Polytope(vec![Halfspace::new(back, 0.0)]),
        })
        .collect();
    let settings = config.solver_settings();
    let mut warm: Vec<Option<WarmStart>> = vec![None; corridors.len()];
    let mut best: Option<Best> = None;
    let tie = |c: f64| 1e-9 * (1.0 + c.abs());
    for e in &entries {
        if stats.solved >= config.max_solves {
            break;
        }
        if let Some(b) = &best {
            if e.bound > b.cost + tie(b.cost) {
                break;
            }
        }
        let center = candidates[e.cand].position(e.step);
        let mut problem = InnerProblem::new(horizon, dt, init, objective);
        problem.v_max = Some(limits.v_max);
        problem.a_max = Some(limits.a_max);
        problem.halfspaces = corridors[e.corridor].halfspaces();
        problem.extra = forward.clone();
        problem.terminal = Some(TerminalBall {
            step: e.step,
            center,
            radius,
        });
        stats.solved += 1;
        let Ok((sol, ws)) = solve_warm(&problem, &settings, warm[e.corridor].as_ref()) else {
            continue;
        };
        if sol.status == SolveStatus::Infeasible {
            continue;
        }
        warm[e.corridor] = Some(ws);
        let mut profile = sol.profile;
        match verify_profile(&profile, view.map, limits, e.step, center) {
            Ok(()) => {}
            Err(Breach::Limit(LimitKind::HeadingRate, ..)) => {
                // One repair: bound the jerk to half of its observed peak.
                let peak = profile.j.iter().map(|j| j.norm()).fold(0.0, f64::max);
                problem.jerk_max = Some(0.5 * peak);
                stats.solved += 1;
                stats.repaired += 1;
                let Ok(sol) = crate::qp::solve(&problem, &settings) else {
                    continue;
                };
                if sol.status == SolveStatus::Infeasible
                    || verify_profile(&sol.profile, view.map, limits, e.step, center).is_err()
                {
                    continue;
                }
                profile = sol.profile;
            }
            Err(_) => continue,
        }
        let cost = objective.evaluate(&profile);
        let key = (e.step, e.cand, e.corridor);
        let better = match &best {
            None => true,
            Some(b) => {
                cost < b.cost - tie(b.cost) || ((cost - b.cost).abs() <= tie(b.cost) && key < b.key)
            }
        };
        if better {
            best = Some(Best { cost, key, profile });
            if let Some(g) = config.good_enough_objective {
                if prior.profile_objective(&best.as_ref().unwrap().profile) >= g {
                    break;
                }
            }
        }
    }
    let intention = best.map(|b| {
        let (step, ci, k) = b.key;
        AdversarialIntention {
            goal: b.profile.p[step],
            collision_step: step,
            objective_value: prior.profile_objective(&b.profile),
            seed_profile: b.profile,
            av_candidate: candidates[ci].source,
            av_index: ci,
            collision_center: candidates[ci].position(step),
            corridor: corridors[k].lanes.clone(),
        }
    });
    (intention, stats)
}

pub fn solve_intention(
    view: &SceneView,
    candidates: &[AvCandidate],
    prior: &KinematicPrior,
    limits: &KinematicLimits,
    config: &IntentionConfig,
) -> Option<AdversarialIntention> {
    search_intention(view, candidates, prior, limits, config).0
}

/// Baseline goal: a point interpolated between the OV's position and a
/// uniformly sampled point of the AV candidate, with a straight-line,
/// constant-speed seed profile. Carries no feasibility guarantee.
pub fn heuristic_intention(
    view: &SceneView,
    candidate: &AvCandidate,
    seed: u64,
) -> Option<AdversarialIntention> {
    let ov = view.ov()?;
    let horizon = view.horizon;
    if horizon == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = candidate.trajectory.len();
    let s = rng.random_range(1..=horizon.min(n - 1).max(1));
    let u: f64 = 1.0 - rng.random::<f64>();
    let init = initial_state_from_history(&ov.history, view.dt);
    let target = candidate.position(s);
    let goal = init.p + (target - init.p) * u;
    // Reaches the goal at step s and keeps the same velocity afterwards.
    let positions: Vec<Vec2> = (0..=horizon)
        .map(|k| init.p + (goal - init.p) * (k as f64 / s as f64))
        .collect();
    let profile = ControlProfile::from_positions(&init, positions, view.dt);
    Some(AdversarialIntention {
        goal,
        collision_step: s,
        objective_value: f64::NAN,
        seed_profile: profile,
        av_candidate: candidate.source,
        av_index: 0,
        collision_center: target,
        corridor: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::KinematicPrior;
    use crate::scenario::{synth_scenario, Lane, Template};

    fn prior() -> KinematicPrior {
        KinematicPrior {
            accel_mean: [0.0, 0.0],
            accel_var: [1.0, 1.0],
            jerk_mean: [0.0, 0.0],
            jerk_var: [4.0, 4.0],
            lambda: 1.0,
        }
    }

    #[test]
    fn t_min_steps_rounds_up() {
        let c = IntentionConfig::default();
        assert_eq!(c.t_min_steps(0.1), 5);
        assert_eq!(c.t_min_steps(0.3), 2);
    }

    #[test]
    fn single_lane_gives_one_parallel_corridor() {
        let map = MapModel::new(vec![Lane::from_positions(
            3.5,
            &[Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)],
        )])
        .unwrap();
        let ov = AgentState::new(10.0, 0.0, 0.0);
        let reference: Vec<Vec2> = (1..=10).map(|t| Vec2::new(10.0 + t as f64, 0.0)).collect();
        let cs = enumerate_corridors(&map, &ov, &reference, &[Vec2::new(50.0, 0.0)], 4);
        assert_eq!(cs.len(), 1);
        for slab in &cs[0].slabs {
            for h in slab {
                assert!(h.normal.x.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_lanes_give_two_corridors_and_contain_centerlines() {
        let map = MapModel::new(vec![
            Lane::from_positions(3.5, &[Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)]),
            Lane::from_positions(3.5, &[Vec2::new(0.0, 3.5), Vec2::new(200.0, 3.5)]),
        ])
        .unwrap();
        let ov = AgentState::new(10.0, 3.5, 0.0);
        let reference: Vec<Vec2> = (1..=10).map(|t| Vec2::new(10.0 + t as f64, 3.5)).collect();
        let cs = enumerate_corridors(&map, &ov, &reference, &[Vec2::new(50.0, 0.0)], 4);
        assert_eq!(cs.len(), 2);
        // The corridor reaching the AV's lane is ordered first.
        assert_eq!(cs[0].lanes, vec![1, 0]);
        for c in &cs {
            for (t, slab) in c.slabs.iter().enumerate() {
                for &l in &c.lanes {
                    let q = Vec2::new(reference[t].x, map.lanes[l].centerline()[0].y);
                    for h in slab {
                        assert!(h.offset - h.normal.dot(&q) >= 1.75 - CORRIDOR_MARGIN - 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn stationary_av_out_of_reach_gives_none() {
        let mut s = synth_scenario(0, Template::AdjacentLane);
        let cur = s.current_index();
        let limits = KinematicLimits::default();
        let far = 30.0 * 6.0 + limits.d_thres + 50.0;
        let ov_x = s.ov().unwrap().trajectory.states[cur].x;
        let av = s.av_index();
        for st in s.agents[av].trajectory.states.iter_mut() {
            *st = AgentState::new(ov_x + far, 0.0, 0.0);
        }
        let view = SceneView::from_scenario(&s);
        let cands = estimate_av_candidates(&view, None, 2, 0);
        assert_eq!(
            cands.len(),
            1,
            "constant velocity duplicates the stationary playback"
        );
        assert!(solve_intention(
            &view,
            &cands,
            &prior(),
            &limits,
            &IntentionConfig::default()
        )
        .is_none());
    }

    #[test]
    fn adjacent_lane_intention_passes_checks() {
        let s = synth_scenario(0, Template::AdjacentLane);
        let view = SceneView::from_scenario(&s);
        let limits = KinematicLimits::default();
        let cands = estimate_av_candidates(&view, Some(&RulePlanner::default()), 3, 0);
        let it = solve_intention(
            &view,
            &cands,
            &prior(),
            &limits,
            &IntentionConfig::default(),
        )
        .expect("intention");
        assert_eq!(it.goal, it.seed_profile.p[it.collision_step]);
        verify_profile(
            &it.seed_profile,
            &s.map,
            &limits,
            it.collision_step,
            it.collision_center,
        )
        .unwrap();
    }

    #[test]
    fn heuristic_is_deterministic_and_on_segment() {
        let s = synth_scenario(3, Template::Oncoming);
        let view = SceneView::from_scenario(&s);
        let cands = estimate_av_candidates(&view, None, 1, 0);
        let a = heuristic_intention(&view, &cands[0], 7).unwrap();
        let b = heuristic_intention(&view, &cands[0], 7).unwrap();
        assert_eq!((a.goal, a.collision_step), (b.goal, b.collision_step));
        assert_eq!(a.seed_profile, b.seed_profile);
        let p0 = view.ov().unwrap().current().position();
        let q = a.collision_center;
        let along = (a.goal - p0).dot(&(q - p0)) / (q - p0).norm_squared();
        assert!((0.0..=1.0).contains(&along));
        assert!((a.seed_profile.p[a.collision_step] - a.goal).norm() < 1e-9);
        assert!(
            crate::geometry::cross(a.goal - p0, q - p0).abs()
                < 1e-6 * (1.0 + (q - p0).norm_squared())
        );
    }

    #[test]
    fn k1_is_playback_only() {
        let s = synth_scenario(1, Template::StraightFollowing);
        let view = SceneView::from_scenario(&s);
        let c = estimate_av_candidates(&view, Some(&RulePlanner::default()), 1, 0);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].source, AvSource::Playback);
        assert_eq!(c[0].trajectory.len(), view.horizon + 1);
    }
}
