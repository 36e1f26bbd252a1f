//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use advsim::geometry::Vec2;
use advsim::intention::initial_state_from_history;
use advsim::intention::SceneView;
use advsim::kinematics::{check_limits, ControlProfile, KinematicLimits};
use advsim::planner::{plan_quintic, PlanRequest, DEFAULT_LANE_SPEED};
use advsim::prior::KinematicPrior;

/// One-axis inner problem. The second axis starts at rest with zero means
/// and no constraint pushing it, so its optimum is identically zero and the
/// problem reduces to this axis.
#[derive(Debug, Clone, Copy)]
pub struct AxisQp {
    pub horizon: usize,
    pub dt: f64,
    pub p0: f64,
    pub v0: f64,
    pub a0: f64,
    pub accel_weight: f64,
    pub accel_mean: f64,
    pub jerk_weight: f64,
    pub jerk_mean: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// `x_step <= bound`.
    pub upper: (usize, f64),
    /// `|x_step - center| <= radius`.
    pub terminal: (usize, f64, f64),
}

impl AxisQp {
    /// `(p, v, a)` for states `0..=T`.
    pub fn roll(&self, jerks: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (mut p, mut v, mut a) = (vec![self.p0], vec![self.v0], vec![self.a0]);
        let dt = self.dt;
        for (t, j) in jerks.iter().enumerate() {
            p.push(p[t] + v[t] * dt + 0.5 * a[t] * dt * dt);
            v.push(v[t] + a[t] * dt);
            a.push(a[t] + j * dt);
        }
        (p, v, a)
    }

    /// Objective, or `None` when a constraint is violated.
    pub fn score(&self, jerks: &[f64]) -> Option<f64> {
        let (p, v, a) = self.roll(jerks);
        for t in 1..=self.horizon {
            if v[t].abs() > self.v_max || a[t].abs() > self.a_max {
                return None;
            }
        }
        if p[self.upper.0] > self.upper.1 {
            return None;
        }
        let (s, c, r) = self.terminal;
        if (p[s] - c).abs() > r {
            return None;
        }
        Some(self.cost(jerks))
    }

    pub fn cost(&self, jerks: &[f64]) -> f64 {
        let (_, _, a) = self.roll(jerks);
        let acc: f64 = a[1..].iter().map(|x| (x - self.accel_mean).powi(2)).sum();
        let jerk: f64 = jerks.iter().map(|x| (x - self.jerk_mean).powi(2)).sum();
        self.accel_weight * acc + self.jerk_weight * jerk
    }

    pub fn free_position(&self, step: usize) -> f64 {
        self.roll(&vec![0.0; self.horizon]).0[step]
    }
}

const WINDOW: i64 = 3;

/// Best objective over the jerk lattice with spacing `fine`: a full sweep of
/// `[-range, range]^T` at spacing `coarse`, then exhaustive local windows of
/// +-WINDOW lattice steps, halving the spacing down to `fine`.
pub fn grid_oracle(qp: &AxisQp, range: f64, coarse: f64, fine: f64) -> Option<(f64, Vec<f64>)> {
    let n = qp.horizon;
    let levels = (2.0 * range / coarse).round() as i64 + 1;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0i64; n];
    let mut x = vec![0.0; n];
    loop {
        for k in 0..n {
            x[k] = -range + idx[k] as f64 * coarse;
        }
        if let Some(c) = qp.score(&x) {
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, x.clone()));
            }
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < levels {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    let mut h = coarse;
    let (mut cost, mut center) = best?;
    while h >= fine - 1e-12 {
        loop {
            let mut improved = false;
            let mut off = vec![-WINDOW; n];
            loop {
                let cand: Vec<f64> = center
                    .iter()
                    .zip(&off)
                    .map(|(c, o)| c + *o as f64 * h)
                    .collect();
                if let Some(c) = qp.score(&cand) {
                    if c < cost - 1e-12 {
                        cost = c;
                        center = cand;
                        improved = true;
                    }
                }
                let mut k = 0;
                while k < n {
                    off[k] += 1;
                    if off[k] <= WINDOW {
                        break;
                    }
                    off[k] = -WINDOW;
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        h *= 0.5;
    }
    Some((cost, center))
}

/// Feasible goal found by the lattice search below.
#[derive(Debug, Clone)]
pub struct GoalHit {
    pub score: f64,
    pub step: usize,
    pub goal: Vec2,
    pub profile: ControlProfile,
}

/// Sweeps goals on a global `spacing` lattice inside the drivable area and
/// within `d_thres` of the AV path at each step `t_min..=horizon`, completes
/// each with a quintic reaching the goal at that step, keeps those within the
/// kinematic limits and the road (margin >= -1e-3), and scores them by mean
/// log-density. With `first_only` the first feasible goal is returned.
pub fn goal_grid_oracle(
    view: &SceneView,
    av_path: &[Vec2],
    prior: &KinematicPrior,
    limits: &KinematicLimits,
    t_min: usize,
    spacing: f64,
    first_only: bool,
) -> Option<GoalHit> {
    let ov = view.ov()?;
    let init = initial_state_from_history(&ov.history, view.dt);
    let r = limits.d_thres;
    let mut best: Option<GoalHit> = None;
    for step in t_min..=view.horizon.min(av_path.len() - 1) {
        let c = av_path[step];
        let (i0, i1) = (
            ((c.x - r) / spacing).ceil() as i64,
            ((c.x + r) / spacing).floor() as i64,
        );
        let (k0, k1) = (
            ((c.y - r) / spacing).ceil() as i64,
            ((c.y + r) / spacing).floor() as i64,
        );
        for i in i0..=i1 {
            for k in k0..=k1 {
                let goal = Vec2::new(i as f64 * spacing, k as f64 * spacing);
                if (goal - c).norm() > r || view.map.d_margin(goal) < 0.0 {
                    continue;
                }
                let req = PlanRequest::toward(
                    view.map,
                    init,
                    goal,
                    step,
                    view.dt,
                    *limits,
                    DEFAULT_LANE_SPEED,
                );
                let Ok(plan) = plan_quintic(&req) else {
                    continue;
                };
                if !check_limits(&plan.profile, limits).is_empty() {
                    continue;
                }
                if plan
                    .profile
                    .p
                    .iter()
                    .skip(1)
                    .any(|p| view.map.d_margin(*p) < -1e-3)
                {
                    continue;
                }
                let score = prior.profile_objective(&plan.profile);
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(GoalHit {
                        score,
                        step,
                        goal,
                        profile: plan.profile,
                    });
                    if first_only {
                        return best;
                    }
                }
            }
        }
    }
    best
}

/// A random one-axis instance paired with the solver's answer.
#[derive(Debug, Clone)]
pub struct SolverCase {
    pub qp: AxisQp,
    pub solver: f64,
    pub oracle: f64,
    pub status: advsim::qp::SolveStatus,
    /// Largest independent constraint violation of the solver's profile.
    pub violation: f64,
}

pub fn random_axis_qp(rng: &mut impl rand::Rng) -> AxisQp {
    let horizon = rng.random_range(2..=5usize);
    let mut qp = AxisQp {
        horizon,
        dt: 1.0,
        p0: rng.random_range(-1.0..1.0),
        v0: rng.random_range(0.0..1.0),
        a0: rng.random_range(-0.3..0.3),
        accel_weight: rng.random_range(0.0..1.0),
        accel_mean: rng.random_range(-0.2..0.2),
        jerk_weight: rng.random_range(0.5..2.0),
        jerk_mean: rng.random_range(-0.2..0.2),
        v_max: rng.random_range(1.2..2.5),
        a_max: rng.random_range(0.6..1.5),
        upper: (1, f64::INFINITY),
        terminal: (2, 0.0, 1.0),
    };
    let us = rng.random_range(1..=horizon);
    qp.upper = (us, qp.free_position(us) + rng.random_range(-0.5..1.5));
    let ts = rng.random_range(2..=horizon);
    qp.terminal = (
        ts,
        qp.free_position(ts) + rng.random_range(-1.0..1.0),
        rng.random_range(0.3..0.8),
    );
    qp
}

/// Solves the two-axis embedding of `qp` and measures the answer against the
/// lattice oracle; `None` when the lattice has no feasible point.
pub fn solver_case(qp: AxisQp) -> Option<SolverCase> {
    use advsim::kinematics::InitialState;
    use advsim::qp::{
        solve, Halfspace, InnerProblem, QuadraticObjective, SolverSettings, TerminalBall,
    };
    let (oracle, _) = grid_oracle(&qp, 2.0, 0.2, 0.05 / 16.0)?;
    let init = InitialState {
        p: Vec2::new(qp.p0, 0.0),
        v: Vec2::new(qp.v0, 0.0),
        a: Vec2::new(qp.a0, 0.0),
        heading: 0.0,
    };
    let objective = QuadraticObjective {
        accel_weight: [qp.accel_weight, 1.0],
        accel_mean: [qp.accel_mean, 0.0],
        jerk_weight: [qp.jerk_weight, 1.0],
        jerk_mean: [qp.jerk_mean, 0.0],
    };
    let mut problem = InnerProblem::new(qp.horizon, qp.dt, init, objective);
    problem.v_max = Some(qp.v_max);
    problem.a_max = Some(qp.a_max);
    problem.halfspaces = vec![(qp.upper.0, Halfspace::new(Vec2::new(1.0, 0.0), qp.upper.1))];
    problem.terminal = Some(TerminalBall {
        step: qp.terminal.0,
        center: Vec2::new(qp.terminal.1, 0.0),
        radius: qp.terminal.2,
    });
    let sol = solve(&problem, &SolverSettings::default()).expect("valid problem");
    let prof = &sol.profile;
    // Re-propagate the returned jerks instead of trusting the profile.
    let (mut p, mut v, mut a) = (init.p, init.v, init.a);
    let mut violation: f64 = 0.0;
    for t in 0..qp.horizon {
        p += v * qp.dt + a * (0.5 * qp.dt * qp.dt);
        v += a * qp.dt;
        a += sol.jerks[t] * qp.dt;
        let s = t + 1;
        violation = violation
            .max((prof.p[s] - p).norm())
            .max(v.norm() - qp.v_max)
            .max(a.norm() - qp.a_max);
        if s == qp.upper.0 {
            violation = violation.max(p.x - qp.upper.1);
        }
        if s == qp.terminal.0 {
            violation = violation.max((p - Vec2::new(qp.terminal.1, 0.0)).norm() - qp.terminal.2);
        }
    }
    Some(SolverCase {
        qp,
        solver: sol.objective_value,
        oracle,
        status: sol.status,
        violation,
    })
}

/// `n` cases from a fixed stream, skipping instances the lattice cannot
/// satisfy.
pub fn solver_cases(n: usize, seed: u64) -> Vec<SolverCase> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        if let Some(c) = solver_case(random_axis_qp(&mut rng)) {
            out.push(c);
        }
    }
    out
}

pub fn solver_case_ok(c: &SolverCase) -> bool {
    c.status == advsim::qp::SolveStatus::Optimal
        && c.violation <= 1e-4
        && (c.solver - c.oracle).abs() <= 1e-4 + 0.05 * c.oracle.abs()
}
