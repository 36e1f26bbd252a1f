//! Point-mass triple-integrator kinematics and feasibility limits.

use crate::geometry::Vec2;
use crate::scenario::normalize_angle;
use serde::{Deserialize, Serialize};

/// Below this speed (m/s) the heading is held at its previous value.
pub const MIN_HEADING_SPEED: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicLimits {
    pub v_max: f64,
    pub a_max: f64,
    /// Maximum heading change per step (rad).
    pub dtheta_max: f64,
    /// Center distance counted as a collision by the intention search (m).
    pub d_thres: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            v_max: 30.0,
            a_max: 8.0,
            dtheta_max: 0.3,
            d_thres: 2.0,
        }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("dtheta_max", self.dtheta_max),
            ("d_thres", self.d_thres),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("limits.{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub p: Vec2,
    pub v: Vec2,
    pub a: Vec2,
    pub heading: f64,
}

impl InitialState {
    pub fn at_rest(p: Vec2, heading: f64) -> Self {
        Self {
            p,
            v: Vec2::zeros(),
            a: Vec2::zeros(),
            heading,
        }
    }
}

/// Kinematic sequence over `steps()` intervals: `p`, `v`, `a` hold one entry
/// per state (`steps() + 1`), `j` one per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProfile {
    pub dt: f64,
    pub heading0: f64,
    pub p: Vec<Vec2>,
    pub v: Vec<Vec2>,
    pub a: Vec<Vec2>,
    pub j: Vec<Vec2>,
}

impl ControlProfile {
    pub fn steps(&self) -> usize {
        self.j.len()
    }

    pub fn initial(&self) -> InitialState {
        InitialState {
            p: self.p[0],
            v: self.v[0],
            a: self.a[0],
            heading: self.heading0,
        }
    }

    pub fn final_position(&self) -> Vec2 {
        *self.p.last().expect("profile has an initial state")
    }

    /// Heading of every state, derived from velocity with the degenerate
    /// speed rule.
    pub fn headings(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.v.len());
        let mut prev = self.heading0;
        out.push(prev);
        for v in &self.v[1..] {
            prev = heading_from_velocity(*v, prev);
            out.push(prev);
        }
        out
    }

    /// Largest deviation from the discrete integrator identities.
    pub fn integrator_residual(&self) -> f64 {
        let dt = self.dt;
        (1..self.p.len())
            .map(|t| {
                let ep = self.p[t]
                    - (self.p[t - 1] + self.v[t - 1] * dt + self.a[t - 1] * (0.5 * dt * dt));
                let ev = self.v[t] - (self.v[t - 1] + self.a[t - 1] * dt);
                let ea = self.a[t] - (self.a[t - 1] + self.j[t - 1] * dt);
                ep.norm().max(ev.norm()).max(ea.norm())
            })
            .fold(0.0, f64::max)
    }

    /// Builds a profile from sampled positions using finite differences,
    /// anchored at the given initial velocity and acceleration.
    pub fn from_positions(initial: &InitialState, positions: Vec<Vec2>, dt: f64) -> Self {
        let n = positions.len();
        let mut v = Vec::with_capacity(n);
        v.push(initial.v);
        for k in 1..n {
            v.push((positions[k] - positions[k - 1]) / dt);
        }
        let mut a = Vec::with_capacity(n);
        a.push(initial.a);
        for k in 1..n {
            a.push((v[k] - v[k - 1]) / dt);
        }
        let j = (1..n).map(|k| (a[k] - a[k - 1]) / dt).collect();
        Self {
            dt,
            heading0: initial.heading,
            p: positions,
            v,
            a,
            j,
        }
    }
}

/// Rolls the triple integrator forward under the given jerk sequence.
pub fn propagate(initial: &InitialState, jerks: &[Vec2], dt: f64) -> ControlProfile {
    let n = jerks.len();
    let mut p = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    let mut a = Vec::with_capacity(n + 1);
    p.push(initial.p);
    v.push(initial.v);
    a.push(initial.a);
    for (t, jerk) in jerks.iter().enumerate() {
        p.push(p[t] + v[t] * dt + a[t] * (0.5 * dt * dt));
        v.push(v[t] + a[t] * dt);
        a.push(a[t] + jerk * dt);
    }
    ControlProfile {
        dt,
        heading0: initial.heading,
        p,
        v,
        a,
        j: jerks.to_vec(),
    }
}

/// Four-quadrant heading of `v`; returns `previous` when the speed is below
/// [`MIN_HEADING_SPEED`].
pub fn heading_from_velocity(v: Vec2, previous: f64) -> f64 {
    if v.norm() < MIN_HEADING_SPEED {
        previous
    } else {
        v.y.atan2(v.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Velocity,
    Acceleration,
    HeadingRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitViolation {
    pub kind: LimitKind,
    pub step: usize,
    /// Amount by which the bound is exceeded.
    pub magnitude: f64,
}

/// Scans steps `1..=steps()`; the initial state is a boundary condition and
/// is not checked.
pub fn check_limits(profile: &ControlProfile, limits: &KinematicLimits) -> Vec<LimitViolation> {
    check_limits_with_slack(profile, limits, 0.0)
}

pub fn check_limits_with_slack(
    profile: &ControlProfile,
    limits: &KinematicLimits,
    slack: f64,
) -> Vec<LimitViolation> {
    let mut out = Vec::new();
    let headings = profile.headings();
    for t in 1..profile.p.len() {
        let speed = profile.v[t].norm();
        if speed > limits.v_max + slack {
            out.push(LimitViolation {
                kind: LimitKind::Velocity,
                step: t,
                magnitude: speed - limits.v_max,
            });
        }
        let accel = profile.a[t].norm();
        if accel > limits.a_max + slack {
            out.push(LimitViolation {
                kind: LimitKind::Acceleration,
                step: t,
                magnitude: accel - limits.a_max,
            });
        }
        let turn = normalize_angle(headings[t] - headings[t - 1]).abs();
        if turn > limits.dtheta_max + slack {
            out.push(LimitViolation {
                kind: LimitKind::HeadingRate,
                step: t,
                magnitude: turn - limits.dtheta_max,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn start(p: (f64, f64), v: (f64, f64), a: (f64, f64)) -> InitialState {
        InitialState {
            p: Vec2::new(p.0, p.1),
            v: Vec2::new(v.0, v.1),
            a: Vec2::new(a.0, a.1),
            heading: 0.0,
        }
    }

    #[test]
    fn uniform_motion_one_step() {
        let prof = propagate(
            &start((0.0, 0.0), (1.0, 0.0), (0.0, 0.0)),
            &[Vec2::zeros()],
            0.1,
        );
        assert!((prof.p[1] - Vec2::new(0.1, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn constant_acceleration_one_step() {
        let prof = propagate(
            &start((0.0, 0.0), (0.0, 0.0), (2.0, 0.0)),
            &[Vec2::zeros()],
            0.1,
        );
        assert!((prof.p[1] - Vec2::new(0.01, 0.0)).norm() < 1e-15);
        assert!((prof.v[1] - Vec2::new(0.2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn heading_quadrants() {
        assert_eq!(heading_from_velocity(Vec2::new(1.0, 0.0), 0.3), 0.0);
        assert!((heading_from_velocity(Vec2::new(0.0, 1.0), 0.3) - FRAC_PI_2).abs() < 1e-15);
        assert!((heading_from_velocity(Vec2::new(-1.0, -1.0), 0.3) + 3.0 * PI / 4.0).abs() < 1e-15);
        assert_eq!(heading_from_velocity(Vec2::new(1e-4, 0.0), 0.3), 0.3);
    }

    #[test]
    fn stationary_profile_has_no_violations() {
        let prof = propagate(
            &start((5.0, 5.0), (0.0, 0.0), (0.0, 0.0)),
            &vec![Vec2::zeros(); 20],
            0.1,
        );
        assert!(check_limits(&prof, &KinematicLimits::default()).is_empty());
    }

    #[test]
    fn single_speed_violation() {
        let mut prof = propagate(
            &start((0.0, 0.0), (10.0, 0.0), (0.0, 0.0)),
            &[Vec2::zeros(); 5],
            0.1,
        );
        prof.v[3] = Vec2::new(20.0, 0.0);
        let limits = KinematicLimits {
            v_max: 15.0,
            ..Default::default()
        };
        let v = check_limits(&prof, &limits);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, LimitKind::Velocity);
        assert_eq!(v[0].step, 3);
        assert!((v[0].magnitude - 5.0).abs() < 1e-12);
    }

    fn vec2() -> impl Strategy<Value = Vec2> {
        (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Vec2::new(x, y))
    }

    proptest! {
        #[test]
        fn integrator_identities_hold(p0 in vec2(), v0 in vec2(), a0 in vec2(),
                                      jerks in proptest::collection::vec(vec2(), 50)) {
            let dt = 0.1;
            let init = InitialState { p: p0, v: v0, a: a0, heading: 0.0 };
            let prof = propagate(&init, &jerks, dt);
            // independent re-computation
            let (mut p, mut v, mut a) = (p0, v0, a0);
            for t in 0..jerks.len() {
                let np = p + v * dt + a * (0.5 * dt * dt);
                let nv = v + a * dt;
                let na = a + jerks[t] * dt;
                p = np; v = nv; a = na;
                let scale = 1.0 + p.norm();
                prop_assert!((prof.p[t + 1] - p).norm() <= 1e-12 * scale);
                prop_assert!((prof.v[t + 1] - v).norm() <= 1e-12 * (1.0 + v.norm()));
                prop_assert!((prof.a[t + 1] - a).norm() <= 1e-12 * (1.0 + a.norm()));
            }
            prop_assert!(prof.integrator_residual() < 1e-12);
        }

        #[test]
        fn violations_match_rescan(vs in proptest::collection::vec(vec2(), 10),
                                   as_ in proptest::collection::vec(vec2(), 10)) {
            let mut prof = propagate(&start((0.0, 0.0), (1.0, 0.0), (0.0, 0.0)), &[Vec2::zeros(); 9], 0.1);
            prof.v = vs.iter().map(|v| v * 2.0).collect();
            prof.a = as_.clone();
            let limits = KinematicLimits { v_max: 6.0, a_max: 4.0, dtheta_max: 0.8, d_thres: 2.0 };
            let got = check_limits(&prof, &limits);
            let hs = prof.headings();
            let mut expected = Vec::new();
            for t in 1..10 {
                if prof.v[t].norm() > 6.0 { expected.push((LimitKind::Velocity, t)); }
                if prof.a[t].norm() > 4.0 { expected.push((LimitKind::Acceleration, t)); }
                let d = (hs[t] - hs[t - 1]).sin().atan2((hs[t] - hs[t - 1]).cos()).abs();
                if d > 0.8 { expected.push((LimitKind::HeadingRate, t)); }
            }
            let got: Vec<_> = got.iter().map(|v| (v.kind, v.step)).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
