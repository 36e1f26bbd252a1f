//! Seeded synthetic traffic logs built from four road templates.

use super::{
    AgentRecord, AgentState, Lane, MapModel, Role, Scenario, Trajectory, DEFAULT_LENGTH,
    DEFAULT_WIDTH,
};
use crate::geometry::{obb_overlap, unit_from_angle, OrientedBox, Vec2};
use crate::kinematics::KinematicLimits;
use crate::planner::driver::{apply_command, follow_path, DriverParams, Neighbor, VehicleState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

pub const SYNTH_DT: f64 = 0.1;
pub const SYNTH_HISTORY: f64 = 1.0;
pub const SYNTH_FUTURE: f64 = 6.0;
pub const LANE_WIDTH: f64 = 3.5;
const ROAD_X: (f64, f64) = (-60.0, 260.0);
const MAX_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    StraightFollowing,
    AdjacentLane,
    IntersectionCrossing,
    Oncoming,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::StraightFollowing,
        Template::AdjacentLane,
        Template::IntersectionCrossing,
        Template::Oncoming,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Template::StraightFollowing => "straight-following",
            Template::AdjacentLane => "adjacent-lane",
            Template::IntersectionCrossing => "intersection-crossing",
            Template::Oncoming => "oncoming",
        }
    }

    pub fn from_name(name: &str) -> Option<Template> {
        Template::ALL.into_iter().find(|t| t.name() == name)
    }

    fn salt(&self) -> u64 {
        match self {
            Template::StraightFollowing => 0x5f1a_0001,
            Template::AdjacentLane => 0x5f1a_0002,
            Template::IntersectionCrossing => 0x5f1a_0003,
            Template::Oncoming => 0x5f1a_0004,
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .iter()
            .find(|t| t.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<_> = Template::ALL.iter().map(Template::name).collect();
                format!(
                    "unknown template {s:?}; expected one of {}",
                    names.join(", ")
                )
            })
    }
}

fn horizontal_lane(y: f64, eastbound: bool) -> Lane {
    let (a, b) = (Vec2::new(ROAD_X.0, y), Vec2::new(ROAD_X.1, y));
    if eastbound {
        Lane::from_positions(LANE_WIDTH, &[a, b])
    } else {
        Lane::from_positions(LANE_WIDTH, &[b, a])
    }
}

fn vertical_lane(x: f64, northbound: bool) -> Lane {
    let (a, b) = (Vec2::new(x, -150.0), Vec2::new(x, 150.0));
    if northbound {
        Lane::from_positions(LANE_WIDTH, &[a, b])
    } else {
        Lane::from_positions(LANE_WIDTH, &[b, a])
    }
}

/// Desired speed that oscillates around a base value.
#[derive(Debug, Clone, Copy)]
struct SpeedProfile {
    base: f64,
    amp: f64,
    period: f64,
    phase: f64,
}

impl SpeedProfile {
    fn constant(v: f64) -> Self {
        Self {
            base: v,
            amp: 0.0,
            period: 1.0,
            phase: 0.0,
        }
    }

    fn varying(rng: &mut ChaCha8Rng, base: f64) -> Self {
        Self {
            base,
            amp: rng.random_range(0.5..2.0),
            period: rng.random_range(3.0..8.0),
            phase: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        (self.base + self.amp * (TAU * t / self.period + self.phase).sin()).max(0.5)
    }
}

struct Spawn {
    lane: usize,
    /// Arclength along the lane at the first logged step.
    arc: f64,
    speed: SpeedProfile,
    role: Role,
}

struct Layout {
    lanes: Vec<Lane>,
    spawns: Vec<Spawn>,
}

fn lane_start(lane: &Lane, arc: f64) -> AgentState {
    let (p, t) = crate::geometry::point_at_arc(lane.centerline(), arc, false);
    AgentState::from_position(p, t.y.atan2(t.x))
}

/// Arclength of the AV-road start line (`x = 0`) on an east- or westbound lane.
fn arc_at_x(lane: &Lane, x: f64) -> f64 {
    let start = lane.centerline()[0].x;
    (x - start).abs()
}

fn layout(template: Template, rng: &mut ChaCha8Rng) -> Layout {
    let av_speed = rng.random_range(6.0..10.0);
    let mut spawns = Vec::new();
    let lanes = match template {
        Template::StraightFollowing => vec![
            horizontal_lane(0.0, true),
            horizontal_lane(LANE_WIDTH, true),
        ],
        Template::AdjacentLane => vec![
            horizontal_lane(0.0, true),
            horizontal_lane(LANE_WIDTH, true),
        ],
        Template::Oncoming => vec![
            horizontal_lane(0.0, true),
            horizontal_lane(LANE_WIDTH, false),
        ],
        Template::IntersectionCrossing => {
            let xc = rng.random_range(45.0..70.0);
            vec![
                horizontal_lane(0.0, true),
                horizontal_lane(LANE_WIDTH, false),
                vertical_lane(xc + 0.5 * LANE_WIDTH, true),
                vertical_lane(xc - 0.5 * LANE_WIDTH, false),
            ]
        }
    };
    let av_arc = arc_at_x(&lanes[0], rng.random_range(-5.0..5.0));
    spawns.push(Spawn {
        lane: 0,
        arc: av_arc,
        speed: SpeedProfile::varying(rng, av_speed),
        role: Role::Av,
    });
    let ov_speed = rng.random_range(5.0..10.0);
    let ov = match template {
        Template::StraightFollowing => Spawn {
            lane: 0,
            arc: av_arc + rng.random_range(15.0..30.0),
            speed: SpeedProfile::varying(rng, ov_speed),
            role: Role::Bv,
        },
        Template::AdjacentLane => Spawn {
            lane: 1,
            arc: av_arc + rng.random_range(-10.0..15.0),
            speed: SpeedProfile::varying(rng, ov_speed),
            role: Role::Bv,
        },
        Template::Oncoming => Spawn {
            lane: 1,
            arc: arc_at_x(&lanes[1], rng.random_range(50.0..100.0)),
            speed: SpeedProfile::varying(rng, ov_speed),
            role: Role::Bv,
        },
        Template::IntersectionCrossing => {
            let lane = if rng.random_bool(0.5) { 2 } else { 3 };
            // Arrival time at the crossing offset from the AV's by 2-4 s either way.
            let lane_x = lanes[lane].centerline()[0].x;
            let av_eta = (lane_x - (av_arc + ROAD_X.0)) / av_speed;
            let offset = rng.random_range(2.0..4.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let eta = (av_eta + offset).max(0.5);
            // Both crossing lanes pass y = 0 at arclength 150.
            Spawn {
                lane,
                arc: (150.0 - eta * ov_speed).max(0.0),
                speed: SpeedProfile::varying(rng, ov_speed),
                role: Role::Bv,
            }
        }
    };
    spawns.push(ov);
    let n_bv = rng.random_range(0..=4usize);
    let mut tries = 0;
    while spawns.len() < 2 + n_bv && tries < 100 {
        tries += 1;
        let lane = rng.random_range(0..lanes.len());
        let base = if lane < 2 {
            arc_at_x(&lanes[lane], 0.0)
        } else {
            150.0
        };
        let arc = base + rng.random_range(-40.0..110.0);
        if arc < 5.0 || arc > lanes[lane].length() - 5.0 {
            continue;
        }
        if spawns
            .iter()
            .any(|s| s.lane == lane && (s.arc - arc).abs() < 14.0)
        {
            continue;
        }
        let p = lane_start(&lanes[lane], arc).position();
        if spawns
            .iter()
            .any(|s| (lane_start(&lanes[s.lane], s.arc).position() - p).norm() < 8.0)
        {
            continue;
        }
        spawns.push(Spawn {
            lane,
            arc,
            speed: SpeedProfile::constant(rng.random_range(5.0..10.0)),
            role: Role::Bv,
        });
    }
    Layout { lanes, spawns }
}

fn neighbors_of(
    i: usize,
    current: &[VehicleState],
    previous: Option<&[VehicleState]>,
    dt: f64,
) -> Vec<Neighbor> {
    (0..current.len())
        .filter(|&k| k != i)
        .map(|k| Neighbor {
            pose: current[k].pose,
            velocity: match previous {
                Some(prev) => (current[k].pose.position() - prev[k].pose.position()) / dt,
                None => unit_from_angle(current[k].pose.heading) * current[k].speed,
            },
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
        })
        .collect()
}

fn simulate(layout: &Layout, steps: usize) -> Vec<Vec<AgentState>> {
    let limits = KinematicLimits::default();
    let dt = SYNTH_DT;
    let mut states: Vec<VehicleState> = layout
        .spawns
        .iter()
        .map(|s| VehicleState {
            pose: lane_start(&layout.lanes[s.lane], s.arc),
            speed: s.speed.at(0.0),
        })
        .collect();
    let mut logs: Vec<Vec<AgentState>> = states.iter().map(|s| vec![s.pose]).collect();
    let mut previous: Option<Vec<VehicleState>> = None;
    for k in 0..steps {
        let t = k as f64 * dt;
        let next: Vec<VehicleState> = (0..states.len())
            .map(|i| {
                let spawn = &layout.spawns[i];
                let lane = &layout.lanes[spawn.lane];
                let params = DriverParams {
                    desired_speed: spawn.speed.at(t),
                    ..DriverParams::default()
                };
                let nb = neighbors_of(i, &states, previous.as_deref(), dt);
                let cmd = follow_path(
                    &states[i],
                    DEFAULT_LENGTH,
                    lane.centerline(),
                    lane.width,
                    &nb,
                    &params,
                    &limits,
                );
                apply_command(&states[i], &cmd, dt, &limits)
            })
            .collect();
        previous = Some(std::mem::replace(&mut states, next));
        for (log, s) in logs.iter_mut().zip(&states) {
            log.push(s.pose);
        }
    }
    logs
}

fn regular(logs: &[Vec<AgentState>], map: &MapModel) -> bool {
    let n = logs[0].len();
    for k in 0..n {
        for (i, a) in logs.iter().enumerate() {
            if map.d_margin(a[k].position()) < 0.0 {
                return false;
            }
            let ba = OrientedBox::new(a[k].position(), a[k].heading, DEFAULT_LENGTH, DEFAULT_WIDTH);
            for b in &logs[i + 1..] {
                // Small margin so replayed logs stay collision-free under
                // tiny numeric differences.
                let bb = OrientedBox::new(
                    b[k].position(),
                    b[k].heading,
                    DEFAULT_LENGTH + 0.2,
                    DEFAULT_WIDTH + 0.2,
                );
                if obb_overlap(&ba, &bb) {
                    return false;
                }
            }
        }
    }
    true
}

/// Index of the non-AV agent with minimum time headway to the AV.
fn select_ov(logs: &[Vec<AgentState>], av: usize) -> Option<usize> {
    let dt = SYNTH_DT;
    let av_log = &logs[av];
    let headway = |other: &[AgentState]| {
        (0..av_log.len())
            .map(|k| {
                let speed = if k == 0 {
                    (av_log[1].position() - av_log[0].position()).norm() / dt
                } else {
                    (av_log[k].position() - av_log[k - 1].position()).norm() / dt
                };
                (other[k].position() - av_log[k].position()).norm() / speed.max(1.0)
            })
            .fold(f64::INFINITY, f64::min)
    };
    (0..logs.len())
        .filter(|&i| i != av)
        .map(|i| (i, headway(&logs[i])))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Deterministic regular (collision-free, on-road) scenario for a template.
pub fn synth_scenario(seed: u64, template: Template) -> Scenario {
    let hist = (SYNTH_HISTORY / SYNTH_DT).round() as usize;
    let fut = (SYNTH_FUTURE / SYNTH_DT).round() as usize;
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ template.salt());
    for _ in 0..MAX_ATTEMPTS {
        let lay = layout(template, &mut rng);
        let map = MapModel::new(lay.lanes.clone()).expect("template lanes are valid");
        let logs = simulate(&lay, hist + fut);
        if !regular(&logs, &map) {
            continue;
        }
        let ov = select_ov(&logs, 0);
        let agents = logs
            .into_iter()
            .enumerate()
            .map(|(i, states)| {
                let role = if i == 0 {
                    Role::Av
                } else if Some(i) == ov {
                    Role::Ov
                } else {
                    lay.spawns[i].role
                };
                let id = match role {
                    Role::Av => "av".to_string(),
                    Role::Ov => format!("ov{i}"),
                    Role::Bv => format!("bv{i}"),
                };
                AgentRecord {
                    id,
                    role,
                    length: DEFAULT_LENGTH,
                    width: DEFAULT_WIDTH,
                    trajectory: Trajectory::new(SYNTH_DT, -SYNTH_HISTORY, states),
                }
            })
            .collect();
        return Scenario::new(agents, map, SYNTH_HISTORY, SYNTH_FUTURE, SYNTH_DT)
            .expect("generated scenario is valid");
    }
    // Fallback that is regular by construction: the AV alone on its road.
    let lanes = vec![
        horizontal_lane(0.0, true),
        horizontal_lane(LANE_WIDTH, true),
    ];
    let lay = Layout {
        spawns: vec![Spawn {
            lane: 0,
            arc: 60.0,
            speed: SpeedProfile::constant(8.0),
            role: Role::Av,
        }],
        lanes,
    };
    let map = MapModel::new(lay.lanes.clone()).expect("template lanes are valid");
    let logs = simulate(&lay, hist + fut);
    let agents = vec![AgentRecord {
        id: "av".into(),
        role: Role::Av,
        length: DEFAULT_LENGTH,
        width: DEFAULT_WIDTH,
        trajectory: Trajectory::new(SYNTH_DT, -SYNTH_HISTORY, logs[0].clone()),
    }];
    Scenario::new(agents, map, SYNTH_HISTORY, SYNTH_FUTURE, SYNTH_DT)
        .expect("generated scenario is valid")
}
