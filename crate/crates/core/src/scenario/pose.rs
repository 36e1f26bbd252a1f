use super::AgentState;
use std::f64::consts::{PI, TAU};
use std::ops::Add;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Relative offset between two coordinate frames: translation difference
/// and heading difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl PoseDelta {
    pub const ZERO: PoseDelta = PoseDelta {
        dx: 0.0,
        dy: 0.0,
        dtheta: 0.0,
    };
}

impl Add for PoseDelta {
    type Output = PoseDelta;

    fn add(self, rhs: PoseDelta) -> PoseDelta {
        PoseDelta {
            dx: self.dx + rhs.dx,
            dy: self.dy + rhs.dy,
            dtheta: normalize_angle(self.dtheta + rhs.dtheta),
        }
    }
}

pub fn pose_delta(frame_a: &AgentState, frame_b: &AgentState) -> PoseDelta {
    PoseDelta {
        dx: frame_a.x - frame_b.x,
        dy: frame_a.y - frame_b.y,
        dtheta: normalize_angle(frame_a.heading - frame_b.heading),
    }
}

/// Expresses `point` in the coordinate system attached to `frame`.
pub fn to_local_frame(point: &AgentState, frame: &AgentState) -> AgentState {
    let (s, c) = frame.heading.sin_cos();
    let dx = point.x - frame.x;
    let dy = point.y - frame.y;
    AgentState::new(
        c * dx + s * dy,
        -s * dx + c * dy,
        point.heading - frame.heading,
    )
}

pub fn from_local_frame(local: &AgentState, frame: &AgentState) -> AgentState {
    let (s, c) = frame.heading.sin_cos();
    AgentState::new(
        frame.x + c * local.x - s * local.y,
        frame.y + s * local.x + c * local.y,
        local.heading + frame.heading,
    )
}
