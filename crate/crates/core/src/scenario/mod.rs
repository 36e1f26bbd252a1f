//! Scenario representation: agents, trajectories, map, pose algebra.

mod io;
mod map;
mod pose;
pub mod synth;

pub use io::{load_scenario, save_scenario};
pub use map::{Lane, MapModel};
pub use pose::{from_local_frame, normalize_angle, pose_delta, to_local_frame, PoseDelta};
pub use synth::{synth_scenario, Template};

use crate::error::ValidationError;
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LENGTH: f64 = 4.5;
pub const DEFAULT_WIDTH: f64 = 2.0;

/// Planar pose; heading is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn from_position(p: Vec2, heading: f64) -> Self {
        Self::new(p.x, p.y, heading)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub start_time: f64,
    pub states: Vec<AgentState>,
}

impl Trajectory {
    pub fn new(dt: f64, start_time: f64, states: Vec<AgentState>) -> Self {
        Self {
            dt,
            start_time,
            states,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.dt
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.states.iter().map(AgentState::position).collect()
    }

    /// Velocity at `index` by backward difference (forward at index 0).
    pub fn velocity_at(&self, index: usize) -> Vec2 {
        if self.states.len() < 2 {
            return Vec2::zeros();
        }
        let i = index.max(1).min(self.states.len() - 1);
        (self.states[i].position() - self.states[i - 1].position()) / self.dt
    }

    /// Acceleration at `index` from the last three states ending there.
    pub fn acceleration_at(&self, index: usize) -> Vec2 {
        if self.states.len() < 3 || index < 2 {
            return Vec2::zeros();
        }
        let p = |k: usize| self.states[k].position();
        (p(index) - p(index - 1) * 2.0 + p(index - 2)) / (self.dt * self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Av,
    Ov,
    Bv,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Av => "av",
            Role::Ov => "ov",
            Role::Bv => "bv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub id: String,
    pub role: Role,
    pub length: f64,
    pub width: f64,
    pub trajectory: Trajectory,
}

impl AgentRecord {
    pub fn footprint_at(&self, state: &AgentState) -> crate::geometry::OrientedBox {
        crate::geometry::OrientedBox::new(state.position(), state.heading, self.length, self.width)
    }
}

/// A traffic scene: every trajectory spans `[-history_horizon, future_horizon]`
/// on the shared `dt` grid, with index `current_index()` at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub agents: Vec<AgentRecord>,
    pub map: MapModel,
    pub history_horizon: f64,
    pub future_horizon: f64,
    pub dt: f64,
}

fn steps_of(horizon: f64, dt: f64) -> Option<usize> {
    let k = horizon / dt;
    let r = k.round();
    ((k - r).abs() < 1e-6 && r >= 0.0).then_some(r as usize)
}

impl Scenario {
    pub fn new(
        agents: Vec<AgentRecord>,
        map: MapModel,
        history_horizon: f64,
        future_horizon: f64,
        dt: f64,
    ) -> Result<Self, ValidationError> {
        let s = Self {
            agents,
            map,
            history_horizon,
            future_horizon,
            dt,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ValidationError::new("dt", "must be a positive number"));
        }
        let hist = steps_of(self.history_horizon, self.dt).ok_or_else(|| {
            ValidationError::new("history_horizon", "must be a non-negative multiple of dt")
        })?;
        let fut = steps_of(self.future_horizon, self.dt).ok_or_else(|| {
            ValidationError::new("future_horizon", "must be a non-negative multiple of dt")
        })?;
        let expected = hist + fut + 1;

        let mut av_at: Option<usize> = None;
        let mut ov_at: Option<usize> = None;
        for (i, a) in self.agents.iter().enumerate() {
            let path = format!("agents[{i}]");
            if a.id.is_empty() {
                return Err(ValidationError::new(
                    format!("{path}.id"),
                    "must not be empty",
                ));
            }
            if let Some(j) = self.agents[..i].iter().position(|b| b.id == a.id) {
                return Err(ValidationError::new(
                    format!("{path}.id"),
                    format!("duplicate id {:?} (also at agents[{j}])", a.id),
                ));
            }
            let slot = match a.role {
                Role::Av => Some(&mut av_at),
                Role::Ov => Some(&mut ov_at),
                Role::Bv => None,
            };
            if let Some(slot) = slot {
                if let Some(j) = *slot {
                    return Err(ValidationError::new(
                        format!("{path}.role"),
                        format!("duplicate role {} (also at agents[{j}])", a.role.as_str()),
                    ));
                }
                *slot = Some(i);
            }
            if !(a.length.is_finite() && a.length > 0.0) {
                return Err(ValidationError::new(
                    format!("{path}.length"),
                    "must be positive",
                ));
            }
            if !(a.width.is_finite() && a.width > 0.0) {
                return Err(ValidationError::new(
                    format!("{path}.width"),
                    "must be positive",
                ));
            }
            let t = &a.trajectory;
            if t.states.is_empty() {
                return Err(ValidationError::new(
                    format!("{path}.trajectory.states"),
                    "must not be empty",
                ));
            }
            if (t.dt - self.dt).abs() > 1e-12 {
                return Err(ValidationError::new(
                    format!("{path}.trajectory.dt"),
                    "must equal scenario dt",
                ));
            }
            if (t.start_time + self.history_horizon).abs() > 1e-9 {
                return Err(ValidationError::new(
                    format!("{path}.trajectory.start_time"),
                    "must equal -history_horizon",
                ));
            }
            if t.states.len() != expected {
                return Err(ValidationError::new(
                    format!("{path}.trajectory.states"),
                    format!("expected {expected} states, found {}", t.states.len()),
                ));
            }
            if let Some(k) = t.states.iter().position(|s| !s.is_finite()) {
                return Err(ValidationError::new(
                    format!("{path}.trajectory.states[{k}]"),
                    "non-finite coordinate",
                ));
            }
        }
        if av_at.is_none() {
            return Err(ValidationError::new(
                "agents",
                "exactly one agent with role av is required",
            ));
        }
        Ok(())
    }

    pub fn history_steps(&self) -> usize {
        steps_of(self.history_horizon, self.dt).unwrap_or(0)
    }

    pub fn future_steps(&self) -> usize {
        steps_of(self.future_horizon, self.dt).unwrap_or(0)
    }

    /// Index of time zero in every trajectory.
    pub fn current_index(&self) -> usize {
        self.history_steps()
    }

    pub fn index_of(&self, role: Role) -> Option<usize> {
        self.agents.iter().position(|a| a.role == role)
    }

    pub fn av_index(&self) -> usize {
        self.index_of(Role::Av)
            .expect("validated scenario has an AV")
    }

    pub fn av(&self) -> &AgentRecord {
        &self.agents[self.av_index()]
    }

    pub fn ov(&self) -> Option<&AgentRecord> {
        self.index_of(Role::Ov).map(|i| &self.agents[i])
    }

    /// Lane-following route of the AV: its lane from the AV's start to the lane end.
    pub fn av_route(&self) -> Option<Vec<Vec2>> {
        let av = self.av();
        let start = av.trajectory.states[self.current_index()];
        let lane = self.map.lane_for_pose(&start)?;
        Some(self.map.lanes[lane].route_from(start.position()))
    }
}
