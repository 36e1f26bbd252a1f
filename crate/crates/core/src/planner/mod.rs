//! Trajectory completion toward a goal, plus reactive driver models.

pub mod driver;
pub mod learned;
pub mod quintic;

pub use learned::{plan_learned, LearnedPlannerWeights};
pub use quintic::{plan_quintic, PlannedProfile};

use crate::geometry::{unit_from_angle, Vec2};
use crate::kinematics::{InitialState, KinematicLimits};
use crate::scenario::MapModel;

/// Speed cap for the terminal velocity of completed plans (m/s).
pub const DEFAULT_LANE_SPEED: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanRequest {
    pub current: InitialState,
    pub goal: Vec2,
    pub terminal_velocity: Vec2,
    pub horizon_steps: usize,
    pub dt: f64,
    pub limits: KinematicLimits,
}

impl PlanRequest {
    /// Request whose terminal velocity follows the lane nearest the goal.
    pub fn toward(
        map: &MapModel,
        current: InitialState,
        goal: Vec2,
        horizon_steps: usize,
        dt: f64,
        limits: KinematicLimits,
        lane_speed: f64,
    ) -> Self {
        Self {
            terminal_velocity: terminal_velocity(map, &current, goal, lane_speed),
            current,
            goal,
            horizon_steps,
            dt,
            limits,
        }
    }
}

/// Tangent of the lane nearest `goal`, scaled to `min(current speed,
/// lane_speed)`. A tangent pointing against the current heading is reversed,
/// so the vehicle ends parallel to the lane in its own direction of travel.
pub fn terminal_velocity(
    map: &MapModel,
    current: &InitialState,
    goal: Vec2,
    lane_speed: f64,
) -> Vec2 {
    let speed = current.v.norm().min(lane_speed);
    let heading_dir = unit_from_angle(current.heading);
    let dir = match map.nearest_lane(goal) {
        Some((_, proj)) if proj.tangent.dot(&heading_dir) >= 0.0 => proj.tangent,
        Some((_, proj)) => -proj.tangent,
        None => heading_dir,
    };
    dir * speed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Lane;

    #[test]
    fn terminal_velocity_follows_lane_or_heading() {
        let map = MapModel::new(vec![Lane::from_positions(
            3.5,
            &[Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)],
        )])
        .unwrap();
        let mut cur = InitialState::at_rest(Vec2::new(10.0, 0.0), 0.1);
        cur.v = Vec2::new(12.0, 0.0);
        let v = terminal_velocity(&map, &cur, Vec2::new(50.0, 0.5), DEFAULT_LANE_SPEED);
        assert!((v - Vec2::new(10.0, 0.0)).norm() < 1e-12);
        cur.heading = std::f64::consts::PI - 0.3;
        cur.v = Vec2::new(-4.0, 0.0);
        let v = terminal_velocity(&map, &cur, Vec2::new(50.0, 0.5), DEFAULT_LANE_SPEED);
        assert!((v - Vec2::new(-4.0, 0.0)).norm() < 1e-9);
    }
}
