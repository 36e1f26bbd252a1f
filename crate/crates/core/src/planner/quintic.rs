use super::PlanRequest;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::kinematics::{check_limits, ControlProfile, LimitViolation};

/// Profile sampled from the plan together with any limit violations, which
/// are reported rather than clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedProfile {
    pub profile: ControlProfile,
    pub violations: Vec<LimitViolation>,
}

/// Coefficients `c0..c5` of the minimum-jerk polynomial on `[0, t]`.
fn quintic_coefficients(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, t: f64) -> [f64; 6] {
    let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
    let c0 = p0;
    let c1 = v0;
    let c2 = 0.5 * a0;
    let d = p1 - (c0 + c1 * t + c2 * t2);
    let dv = v1 - (c1 + 2.0 * c2 * t);
    let da = a1 - 2.0 * c2;
    let c3 = (10.0 * d - 4.0 * dv * t + 0.5 * da * t2) / t3;
    let c4 = (-15.0 * d + 7.0 * dv * t - da * t2) / t4;
    let c5 = (6.0 * d - 3.0 * dv * t + 0.5 * da * t2) / t5;
    [c0, c1, c2, c3, c4, c5]
}

fn eval(c: &[f64; 6], t: f64) -> (f64, f64, f64, f64) {
    let p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
    let v = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
    let a = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
    let j = 6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5]);
    (p, v, a, j)
}

/// Minimum-jerk completion: per-axis quintic matching the current state and
/// reaching the goal with the requested terminal velocity and zero
/// acceleration.
pub fn plan_quintic(req: &PlanRequest) -> Result<PlannedProfile> {
    if req.horizon_steps == 0 {
        return Err(Error::InvalidInput(
            "horizon_steps must be at least 1".into(),
        ));
    }
    let n = req.horizon_steps;
    let total = n as f64 * req.dt;
    let c = &req.current;
    let cx = quintic_coefficients(
        c.p.x,
        c.v.x,
        c.a.x,
        req.goal.x,
        req.terminal_velocity.x,
        0.0,
        total,
    );
    let cy = quintic_coefficients(
        c.p.y,
        c.v.y,
        c.a.y,
        req.goal.y,
        req.terminal_velocity.y,
        0.0,
        total,
    );
    let mut p = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    let mut a = Vec::with_capacity(n + 1);
    let mut jm = Vec::with_capacity(n);
    for k in 0..=n {
        let t = if k == n { total } else { k as f64 * req.dt };
        let (px, vx, ax, _) = eval(&cx, t);
        let (py, vy, ay, _) = eval(&cy, t);
        p.push(Vec2::new(px, py));
        v.push(Vec2::new(vx, vy));
        a.push(Vec2::new(ax, ay));
    }
    // Jerks are chosen so the discrete integrator tracks the sampled
    // velocity from step 1 onward; positions then drift only O(dt^2).
    let mut a_prev = c.a;
    let mut v_disc = c.v;
    for k in 0..n {
        let a_next = if k + 1 == n {
            Vec2::zeros()
        } else {
            v_disc += a_prev * req.dt;
            (v[k + 2] - v_disc) / req.dt
        };
        jm.push((a_next - a_prev) / req.dt);
        a_prev = a_next;
    }
    // Exact boundary values rather than re-evaluated polynomials.
    p[0] = c.p;
    v[0] = c.v;
    a[0] = c.a;
    p[n] = req.goal;
    v[n] = req.terminal_velocity;
    a[n] = Vec2::zeros();
    let profile = ControlProfile {
        dt: req.dt,
        heading0: c.heading,
        p,
        v,
        a,
        j: jm,
    };
    let violations = check_limits(&profile, &req.limits);
    Ok(PlannedProfile {
        profile,
        violations,
    })
}

/// Continuous jerk of the plan at `t` seconds, for diagnostics and tests.
pub fn quintic_jerk_at(req: &PlanRequest, t: f64) -> Vec2 {
    let total = req.horizon_steps as f64 * req.dt;
    let c = &req.current;
    let cx = quintic_coefficients(
        c.p.x,
        c.v.x,
        c.a.x,
        req.goal.x,
        req.terminal_velocity.x,
        0.0,
        total,
    );
    let cy = quintic_coefficients(
        c.p.y,
        c.v.y,
        c.a.y,
        req.goal.y,
        req.terminal_velocity.y,
        0.0,
        total,
    );
    Vec2::new(eval(&cx, t).3, eval(&cy, t).3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{propagate, InitialState, KinematicLimits};
    use proptest::prelude::*;

    fn request(current: InitialState, goal: Vec2, vt: Vec2, n: usize, dt: f64) -> PlanRequest {
        PlanRequest {
            current,
            goal,
            terminal_velocity: vt,
            horizon_steps: n,
            dt,
            limits: KinematicLimits::default(),
        }
    }

    #[test]
    fn rest_to_rest_midpoint() {
        let req = request(
            InitialState::at_rest(Vec2::zeros(), 0.0),
            Vec2::new(10.0, 0.0),
            Vec2::zeros(),
            60,
            0.1,
        );
        let plan = plan_quintic(&req).unwrap();
        assert!((plan.profile.p[30] - Vec2::new(5.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn stationary_when_goal_is_start() {
        let start = InitialState::at_rest(Vec2::new(3.0, 4.0), 1.0);
        let plan =
            plan_quintic(&request(start, Vec2::new(3.0, 4.0), Vec2::zeros(), 20, 0.1)).unwrap();
        assert!(plan
            .profile
            .p
            .iter()
            .all(|p| (p - Vec2::new(3.0, 4.0)).norm() < 1e-12));
        assert!(plan.violations.is_empty());
    }

    #[test]
    fn zero_horizon_is_error() {
        let req = request(
            InitialState::at_rest(Vec2::zeros(), 0.0),
            Vec2::zeros(),
            Vec2::zeros(),
            0,
            0.1,
        );
        assert!(plan_quintic(&req).is_err());
    }

    #[test]
    fn violations_reported_not_clipped() {
        let req = request(
            InitialState::at_rest(Vec2::zeros(), 0.0),
            Vec2::new(200.0, 0.0),
            Vec2::zeros(),
            20,
            0.1,
        );
        let plan = plan_quintic(&req).unwrap();
        assert!(!plan.violations.is_empty());
        assert_eq!(plan.profile.final_position(), Vec2::new(200.0, 0.0));
    }

    fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
        (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
    }

    /// Third derivative of a polynomial given by ascending coefficients.
    fn poly_jerk(c: &[f64], t: f64) -> f64 {
        c.iter()
            .enumerate()
            .skip(3)
            .map(|(k, ck)| ck * (k * (k - 1) * (k - 2)) as f64 * t.powi(k as i32 - 3))
            .sum()
    }

    /// Integral of the squared jerk over `[0, total]` by Simpson's rule.
    fn jerk_cost(cx: &[f64], cy: &[f64], total: f64) -> f64 {
        let n = 2000;
        let h = total / n as f64;
        (0..=n)
            .map(|i| {
                let t = i as f64 * h;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * (poly_jerk(cx, t).powi(2) + poly_jerk(cy, t).powi(2))
            })
            .sum::<f64>()
            * h
            / 3.0
    }

    /// Ascending coefficients of `e * t^3 (T - t)^3 (1 + f t / T)`, which
    /// vanishes with its first two derivatives at both ends.
    fn bump(e: f64, f: f64, total: f64) -> Vec<f64> {
        let t = total;
        let base = [0.0, 0.0, 0.0, t.powi(3), -3.0 * t * t, 3.0 * t, -1.0];
        let mut out = [0.0; 8];
        for (k, b) in base.iter().enumerate() {
            out[k] += e * b;
            out[k + 1] += e * b * f / t;
        }
        let norm = t.powi(6) / 64.0;
        out.iter().map(|v| v / norm).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn boundaries_and_min_jerk(p0 in vec2(20.0), v0 in vec2(8.0), a0 in vec2(2.0), goal in vec2(60.0),
                                   vt in vec2(8.0), n in 10usize..80,
                                   perturb in proptest::collection::vec((vec2(1.0), vec2(1.0)), 100)) {
            let dt = 0.1;
            let init = InitialState { p: p0, v: v0, a: a0, heading: 0.0 };
            let req = request(init, goal, vt, n, dt);
            let plan = plan_quintic(&req).unwrap();
            let total = n as f64 * dt;
            let cx = quintic_coefficients(p0.x, v0.x, a0.x, goal.x, vt.x, 0.0, total);
            let cy = quintic_coefficients(p0.y, v0.y, a0.y, goal.y, vt.y, 0.0, total);
            for (c, k) in [(&cx, 0usize), (&cy, 1usize)] {
                let (p, v, a, _) = eval(c, 0.0);
                prop_assert!((p - p0[k]).abs() < 1e-9 && (v - v0[k]).abs() < 1e-9 && (a - a0[k]).abs() < 1e-9);
                let (p, v, a, _) = eval(c, total);
                prop_assert!((p - goal[k]).abs() < 1e-9 * (1.0 + goal[k].abs()));
                prop_assert!((v - vt[k]).abs() < 1e-9 * (1.0 + vt[k].abs()));
                prop_assert!(a.abs() < 1e-9 * (1.0 + vt[k].abs() + goal[k].abs()));
            }
            prop_assert_eq!(plan.profile.final_position(), goal);
            let base = jerk_cost(&cx, &cy, total);
            for (ex, ey) in perturb {
                let add = |c: &[f64; 6], d: Vec<f64>| {
                    let mut o = d;
                    for (i, ci) in c.iter().enumerate() { o[i] += ci; }
                    o
                };
                let px = add(&cx, bump(ex.x, ex.y, total));
                let py = add(&cy, bump(ey.x, ey.y, total));
                prop_assert!(jerk_cost(&px, &py, total) >= base * (1.0 - 1e-9) - 1e-9);
            }
        }

        #[test]
        fn resampled_integration_is_consistent(v0 in vec2(8.0), goal in vec2(60.0), vt in vec2(8.0)) {
            let dt = 0.1;
            let init = InitialState { p: Vec2::zeros(), v: v0, a: Vec2::zeros(), heading: 0.0 };
            let req = request(init, goal, vt, 60, dt);
            let plan = plan_quintic(&req).unwrap();
            let re = propagate(&init, &plan.profile.j, dt);
            for (a, b) in re.p.iter().zip(&plan.profile.p) {
                prop_assert!((a - b).norm() < 0.05);
            }
        }
    }
}
