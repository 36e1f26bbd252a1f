//! JSON scenario files.
//!
//! ```json
//! {"dt": 0.1, "history_horizon": 1.0, "future_horizon": 6.0,
//!  "agents": [{"id": "ego", "role": "av", "length": 4.5, "width": 2.0,
//!              "trajectory": {"start_time": -1.0, "states": [[x, y, heading], ...]}}],
//!  "map": {"lanes": [{"width": 3.5, "points": [[x, y, heading], ...]}]}}
//! ```

use super::{
    AgentRecord, AgentState, Lane, MapModel, Role, Scenario, Trajectory, DEFAULT_LENGTH,
    DEFAULT_WIDTH,
};
use crate::error::Result;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    dt: f64,
    history_horizon: f64,
    future_horizon: f64,
    agents: Vec<AgentDoc>,
    map: MapDoc,
}

fn default_length() -> f64 {
    DEFAULT_LENGTH
}

fn default_width() -> f64 {
    DEFAULT_WIDTH
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDoc {
    id: String,
    role: Role,
    #[serde(default = "default_length")]
    length: f64,
    #[serde(default = "default_width")]
    width: f64,
    trajectory: TrajectoryDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryDoc {
    start_time: f64,
    states: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDoc {
    lanes: Vec<LaneDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneDoc {
    width: f64,
    points: Vec<[f64; 3]>,
}

fn state(s: &[f64; 3]) -> AgentState {
    AgentState::new(s[0], s[1], s[2])
}

fn triple(s: &AgentState) -> [f64; 3] {
    [s.x, s.y, s.heading]
}

pub fn load_scenario(bytes: &[u8]) -> Result<Scenario> {
    let doc: ScenarioDoc = serde_json::from_slice(bytes)?;
    let lanes = doc
        .map
        .lanes
        .iter()
        .map(|l| Lane::new(l.width, l.points.iter().map(state).collect()))
        .collect();
    let map = MapModel::new(lanes)?;
    let agents = doc
        .agents
        .into_iter()
        .map(|a| AgentRecord {
            id: a.id,
            role: a.role,
            length: a.length,
            width: a.width,
            trajectory: Trajectory::new(
                doc.dt,
                a.trajectory.start_time,
                a.trajectory.states.iter().map(state).collect(),
            ),
        })
        .collect();
    Ok(Scenario::new(
        agents,
        map,
        doc.history_horizon,
        doc.future_horizon,
        doc.dt,
    )?)
}

pub fn save_scenario(scenario: &Scenario) -> Vec<u8> {
    let doc = ScenarioDoc {
        dt: scenario.dt,
        history_horizon: scenario.history_horizon,
        future_horizon: scenario.future_horizon,
        agents: scenario
            .agents
            .iter()
            .map(|a| AgentDoc {
                id: a.id.clone(),
                role: a.role,
                length: a.length,
                width: a.width,
                trajectory: TrajectoryDoc {
                    start_time: a.trajectory.start_time,
                    states: a.trajectory.states.iter().map(triple).collect(),
                },
            })
            .collect(),
        map: MapDoc {
            lanes: scenario
                .map
                .lanes
                .iter()
                .map(|l| LaneDoc {
                    width: l.width,
                    points: l.points.iter().map(triple).collect(),
                })
                .collect(),
        },
    };
    serde_json::to_vec_pretty(&doc).expect("scenario serializes")
}
