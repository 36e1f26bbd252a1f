//! Reactive driver models: IDM car following with pure-pursuit lane keeping,
//! used for background traffic, the rule-based AV and the scenario generator.

use crate::geometry::{point_at_arc, project_onto_polyline, unit_from_angle, Vec2};
use crate::kinematics::KinematicLimits;
use crate::scenario::{normalize_angle, AgentState, Lane};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub delta: f64,
    /// Pursuit lookahead is `max(min_lookahead, lookahead_time * speed)`.
    pub lookahead_time: f64,
    pub min_lookahead: f64,
    /// Horizon over which a neighbour's lateral drift is extrapolated when
    /// testing for cut-ins (s).
    pub cut_in_horizon: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self {
            desired_speed: 10.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            delta: 4.0,
            lookahead_time: 1.0,
            min_lookahead: 5.0,
            cut_in_horizon: 1.0,
        }
    }
}

/// Kinematic state of a driver-controlled vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pose: AgentState,
    pub speed: f64,
}

/// What a driver model sees of another vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub pose: AgentState,
    pub velocity: Vec2,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    /// Longitudinal acceleration (m/s^2).
    pub accel: f64,
    /// Heading the vehicle steers toward (rad).
    pub target_heading: f64,
}

/// Leader as seen along the follower's path: bumper gap and speed along the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

pub fn idm_accel(
    params: &DriverParams,
    speed: f64,
    leader: Option<Leader>,
    limits: &KinematicLimits,
) -> f64 {
    let free = 1.0 - (speed / params.desired_speed.max(1e-3)).powf(params.delta);
    let interaction = match leader {
        Some(l) => {
            let dv = speed - l.speed;
            let s_star = params.min_gap
                + (speed * params.time_headway
                    + speed * dv / (2.0 * (params.max_accel * params.comfort_decel).sqrt()))
                .max(0.0);
            (s_star / l.gap.max(0.1)).powi(2)
        }
        None => 0.0,
    };
    (params.max_accel * (free - interaction)).clamp(-limits.a_max, limits.a_max)
}

/// Closest neighbour ahead on `path` that occupies the follower's lane band
/// now or after `cut_in_horizon` seconds.
pub fn find_leader(
    ego: &VehicleState,
    ego_length: f64,
    path: &[Vec2],
    lane_width: f64,
    neighbors: &[Neighbor],
    params: &DriverParams,
) -> Option<Leader> {
    let ego_arc = project_onto_polyline(ego.pose.position(), path).arc;
    let mut best: Option<Leader> = None;
    for n in neighbors {
        let proj = project_onto_polyline(n.pose.position(), path);
        let ahead = proj.arc - ego_arc;
        if ahead <= 0.0 || ahead > 150.0 {
            continue;
        }
        let normal = Vec2::new(-proj.tangent.y, proj.tangent.x);
        let band = 0.5 * lane_width + 0.5 * n.width - 0.2;
        let lat_now = proj.lateral;
        let lat_pred = lat_now + n.velocity.dot(&normal) * params.cut_in_horizon;
        let in_band =
            lat_now.abs() < band || (lat_pred.abs() < band && lat_pred.abs() < lat_now.abs());
        if !in_band {
            continue;
        }
        let gap = ahead - 0.5 * (ego_length + n.length);
        let speed = n.velocity.dot(&proj.tangent);
        if best.is_none_or(|b| gap < b.gap) {
            best = Some(Leader { gap, speed });
        }
    }
    best
}

/// Heading toward the pursuit point on `path`.
pub fn pursuit_heading(ego: &VehicleState, path: &[Vec2], params: &DriverParams) -> f64 {
    let arc = project_onto_polyline(ego.pose.position(), path).arc;
    let look = params.min_lookahead.max(params.lookahead_time * ego.speed);
    let (target, tangent) = point_at_arc(path, arc + look, true);
    let d = target - ego.pose.position();
    if d.norm() < 1e-6 {
        tangent.y.atan2(tangent.x)
    } else {
        d.y.atan2(d.x)
    }
}

/// Car following plus lane keeping along `path`.
#[allow(clippy::too_many_arguments)]
pub fn follow_path(
    ego: &VehicleState,
    ego_length: f64,
    path: &[Vec2],
    lane_width: f64,
    neighbors: &[Neighbor],
    params: &DriverParams,
    limits: &KinematicLimits,
) -> Command {
    let leader = find_leader(ego, ego_length, path, lane_width, neighbors, params);
    Command {
        accel: idm_accel(params, ego.speed, leader, limits),
        target_heading: pursuit_heading(ego, path, params),
    }
}

/// Advances a unicycle one step. The heading change is clamped to
/// `dtheta_max`, speed never goes negative, and the displacement uses the
/// updated speed so that finite differences of the logged positions recover it.
pub fn apply_command(
    state: &VehicleState,
    cmd: &Command,
    dt: f64,
    limits: &KinematicLimits,
) -> VehicleState {
    let turn = normalize_angle(cmd.target_heading - state.pose.heading)
        .clamp(-limits.dtheta_max, limits.dtheta_max);
    let heading = state.pose.heading + turn;
    let speed = (state.speed + cmd.accel * dt).clamp(0.0, limits.v_max);
    let p = state.pose.position() + unit_from_angle(heading) * (speed * dt);
    VehicleState {
        pose: AgentState::from_position(p, heading),
        speed,
    }
}

/// Background-vehicle policy: car following and lane keeping on `lane`.
pub fn bv_policy_step(
    bv: &VehicleState,
    length: f64,
    lane: &Lane,
    neighbors: &[Neighbor],
    params: &DriverParams,
    limits: &KinematicLimits,
) -> Command {
    follow_path(
        bv,
        length,
        lane.centerline(),
        lane.width,
        neighbors,
        params,
        limits,
    )
}

/// Rule-based AV: the background policy applied along a designated route.
pub fn av_rule_planner_step(
    av: &VehicleState,
    length: f64,
    route: &[Vec2],
    lane_width: f64,
    neighbors: &[Neighbor],
    params: &DriverParams,
    limits: &KinematicLimits,
) -> Command {
    follow_path(av, length, route, lane_width, neighbors, params, limits)
}

/// Neighbour view of another vehicle from its last two logged poses.
pub fn neighbor_from_poses(
    previous: &AgentState,
    current: &AgentState,
    length: f64,
    width: f64,
    dt: f64,
) -> Neighbor {
    Neighbor {
        pose: *current,
        velocity: (current.position() - previous.position()) / dt,
        length,
        width,
    }
}

/// Highest finite-difference speed over a pose history, used as the desired
/// speed of replayed drivers.
pub fn desired_speed_from_history(history: &[AgentState], dt: f64) -> Option<f64> {
    history
        .windows(2)
        .map(|w| (w[1].position() - w[0].position()).norm() / dt)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::MapModel;

    fn straight_path() -> Vec<Vec2> {
        vec![Vec2::new(-50.0, 0.0), Vec2::new(500.0, 0.0)]
    }

    #[test]
    fn equilibrium_without_leader() {
        let p = DriverParams::default();
        let a = idm_accel(&p, p.desired_speed, None, &KinematicLimits::default());
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn stopped_leader_close_ahead_brakes_at_limit() {
        let p = DriverParams::default();
        let limits = KinematicLimits::default();
        let a = idm_accel(
            &p,
            10.0,
            Some(Leader {
                gap: 2.0,
                speed: 0.0,
            }),
            &limits,
        );
        assert_eq!(a, -limits.a_max);
    }

    #[test]
    fn rollout_stays_in_lane() {
        let map = MapModel::new(vec![Lane::from_positions(3.5, &straight_path())]).unwrap();
        let limits = KinematicLimits::default();
        let params = DriverParams::default();
        let mut s = VehicleState {
            pose: AgentState::new(0.0, 1.0, 0.2),
            speed: 8.0,
        };
        for _ in 0..100 {
            let cmd = follow_path(&s, 4.5, &straight_path(), 3.5, &[], &params, &limits);
            assert!(cmd.accel.abs() <= limits.a_max);
            s = apply_command(&s, &cmd, 0.1, &limits);
            assert!(map.d_margin(s.pose.position()) >= 0.0);
        }
        assert!(s.pose.y.abs() < 0.05);
    }

    #[test]
    fn adjacent_vehicle_is_not_a_leader_until_it_drifts_in() {
        let params = DriverParams::default();
        let ego = VehicleState {
            pose: AgentState::new(0.0, 0.0, 0.0),
            speed: 10.0,
        };
        let mut n = Neighbor {
            pose: AgentState::new(15.0, 3.5, 0.0),
            velocity: Vec2::new(10.0, 0.0),
            length: 4.5,
            width: 2.0,
        };
        assert!(find_leader(&ego, 4.5, &straight_path(), 3.5, &[n], &params).is_none());
        n.velocity = Vec2::new(10.0, -2.0);
        assert!(find_leader(&ego, 4.5, &straight_path(), 3.5, &[n], &params).is_some());
    }
}
