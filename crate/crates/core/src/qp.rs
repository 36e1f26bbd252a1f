//! Operator-splitting solver for the convex jerk-sequence problem.
//!
//! Decision variable: jerks `j_0..j_{T-1}` (2-vectors). Positions,
//! velocities and accelerations are affine in the jerks, so every constraint
//! is a 2-D convex set applied to an affine image of the variable. Each axis
//! shares the same row coefficients, which keeps the linear system per axis
//! `T x T`.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::kinematics::{propagate, ControlProfile, InitialState};
use crate::prior::KinematicPrior;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Position,
    Velocity,
    Acceleration,
    Jerk,
}

/// `normal . x <= offset`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace {
    pub normal: Vec2,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec2, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Signed distance; positive outside.
    pub fn violation(&self, x: Vec2) -> f64 {
        (self.normal.dot(&x) - self.offset) / self.normal.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Ball { center: Vec2, radius: f64 },
    Polytope(Vec<Halfspace>),
}

impl ConvexSet {
    pub fn project(&self, x: Vec2) -> Vec2 {
        match self {
            ConvexSet::Ball { center, radius } => center + project_ball(x - center, *radius),
            ConvexSet::Polytope(hs) => project_polytope(x, hs),
        }
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: Vec2) -> f64 {
        match self {
            ConvexSet::Ball { center, radius } => ((x - center).norm() - radius).max(0.0),
            ConvexSet::Polytope(hs) => (x - project_polytope(x, hs)).norm(),
        }
    }
}

/// Projection onto the origin-centred ball of the given radius.
pub fn project_ball(x: Vec2, radius: f64) -> Vec2 {
    let n = x.norm();
    if n <= radius {
        x
    } else {
        x * (radius / n)
    }
}

pub fn project_halfspace(x: Vec2, normal: Vec2, offset: f64) -> Vec2 {
    let excess = normal.dot(&x) - offset;
    if excess <= 0.0 {
        x
    } else {
        x - normal * (excess / normal.norm_squared())
    }
}

/// Exact projection onto a 2-D polyhedron: the nearest feasible point among
/// the projections onto each boundary line and the pairwise vertices. An
/// empty polyhedron returns the least-violating candidate.
pub fn project_polytope(x: Vec2, hs: &[Halfspace]) -> Vec2 {
    let worst = |p: Vec2| hs.iter().map(|h| h.violation(p)).fold(0.0, f64::max);
    if worst(x) <= 0.0 {
        return x;
    }
    let tol = 1e-9 * (1.0 + x.norm());
    let mut best: Option<(f64, Vec2)> = None;
    let mut fallback: Option<(f64, Vec2)> = None;
    let mut consider = |p: Vec2| {
        let w = worst(p);
        if w <= tol {
            let d = (p - x).norm_squared();
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, p));
            }
        } else if fallback.is_none_or(|b| w < b.0) {
            fallback = Some((w, p));
        }
    };
    for h in hs {
        let n2 = h.normal.norm_squared();
        consider(x - h.normal * ((h.normal.dot(&x) - h.offset) / n2));
    }
    for (i, a) in hs.iter().enumerate() {
        for b in &hs[i + 1..] {
            let det = a.normal.x * b.normal.y - a.normal.y * b.normal.x;
            if det.abs() < 1e-12 {
                continue;
            }
            let px = (a.offset * b.normal.y - a.normal.y * b.offset) / det;
            let py = (a.normal.x * b.offset - a.offset * b.normal.x) / det;
            consider(Vec2::new(px, py));
        }
    }
    best.or(fallback).map(|b| b.1).unwrap_or(x)
}

/// Separable quadratic realism cost per axis `k`:
/// `w_a[k] * sum_{t=1..T} (a_t - mu_a)^2 + w_j[k] * sum_{t=0..T-1} (j_t - mu_j)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    pub accel_weight: [f64; 2],
    pub accel_mean: [f64; 2],
    pub jerk_weight: [f64; 2],
    pub jerk_mean: [f64; 2],
}

impl QuadraticObjective {
    pub fn jerk_energy() -> Self {
        Self {
            accel_weight: [0.0; 2],
            accel_mean: [0.0; 2],
            jerk_weight: [1.0; 2],
            jerk_mean: [0.0; 2],
        }
    }

    /// Negative log-density of the prior up to an additive constant.
    pub fn from_prior(prior: &KinematicPrior) -> Self {
        Self {
            accel_weight: [0.5 / prior.accel_var[0], 0.5 / prior.accel_var[1]],
            accel_mean: prior.accel_mean,
            jerk_weight: [
                0.5 * prior.lambda / prior.jerk_var[0],
                0.5 * prior.lambda / prior.jerk_var[1],
            ],
            jerk_mean: prior.jerk_mean,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            accel_weight: [self.accel_weight[0] * c, self.accel_weight[1] * c],
            jerk_weight: [self.jerk_weight[0] * c, self.jerk_weight[1] * c],
            ..*self
        }
    }

    pub fn evaluate(&self, profile: &ControlProfile) -> f64 {
        let mut total = 0.0;
        for k in 0..2 {
            let acc: f64 = profile.a[1..]
                .iter()
                .map(|a| (a[k] - self.accel_mean[k]).powi(2))
                .sum();
            let jerk: f64 = profile
                .j
                .iter()
                .map(|j| (j[k] - self.jerk_mean[k]).powi(2))
                .sum();
            total += self.accel_weight[k] * acc + self.jerk_weight[k] * jerk;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub quantity: Quantity,
    /// State index in `1..=T` for position/velocity/acceleration, jerk index in `0..T`.
    pub step: usize,
    pub set: ConvexSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalBall {
    pub step: usize,
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerProblem {
    pub horizon: usize,
    pub dt: f64,
    pub initial: InitialState,
    pub objective: QuadraticObjective,
    pub v_max: Option<f64>,
    pub a_max: Option<f64>,
    pub jerk_max: Option<f64>,
    /// Position halfspaces `(step, halfspace)`; halfspaces sharing a step
    /// form one polyhedron.
    pub halfspaces: Vec<(usize, Halfspace)>,
    pub terminal: Option<TerminalBall>,
    pub extra: Vec<Constraint>,
}

impl InnerProblem {
    pub fn new(
        horizon: usize,
        dt: f64,
        initial: InitialState,
        objective: QuadraticObjective,
    ) -> Self {
        Self {
            horizon,
            dt,
            initial,
            objective,
            v_max: None,
            a_max: None,
            jerk_max: None,
            halfspaces: Vec::new(),
            terminal: None,
            extra: Vec::new(),
        }
    }

    fn check_step(&self, q: Quantity, step: usize, what: &str) -> Result<()> {
        let ok = match q {
            Quantity::Jerk => step < self.horizon,
            _ => (1..=self.horizon).contains(&step),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "{what}: step {step} outside horizon {}",
                self.horizon
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        let o = &self.objective;
        let weights = o.accel_weight.iter().chain(o.jerk_weight.iter());
        if weights.clone().any(|w| !(w.is_finite() && *w >= 0.0))
            || o.jerk_weight.iter().any(|w| *w <= 0.0)
        {
            return Err(Error::InvalidInput(
                "objective weights must be finite, jerk weights positive".into(),
            ));
        }
        for (name, b) in [
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("jerk_max", self.jerk_max),
        ] {
            if let Some(b) = b {
                if !(b.is_finite() && b > 0.0) {
                    return Err(Error::InvalidInput(format!("{name} must be positive")));
                }
            }
        }
        for (step, h) in &self.halfspaces {
            self.check_step(Quantity::Position, *step, "halfspace")?;
            if !(h.normal.norm() > 0.0 && h.offset.is_finite()) {
                return Err(Error::InvalidInput(
                    "halfspace normal must be non-zero".into(),
                ));
            }
        }
        if let Some(t) = &self.terminal {
            self.check_step(Quantity::Position, t.step, "terminal")?;
            if !(t.radius > 0.0) {
                return Err(Error::InvalidInput(
                    "terminal radius must be positive".into(),
                ));
            }
        }
        for c in &self.extra {
            self.check_step(c.quantity, c.step, "constraint")?;
        }
        Ok(())
    }

    /// Every constraint as an explicit `(quantity, step, set)` block.
    pub fn constraints(&self) -> Vec<Constraint> {
        let t = self.horizon;
        let mut out = Vec::new();
        if let Some(r) = self.v_max {
            out.extend((1..=t).map(|s| Constraint {
                quantity: Quantity::Velocity,
                step: s,
                set: ConvexSet::Ball {
                    center: Vec2::zeros(),
                    radius: r,
                },
            }));
        }
        if let Some(r) = self.a_max {
            out.extend((1..=t).map(|s| Constraint {
                quantity: Quantity::Acceleration,
                step: s,
                set: ConvexSet::Ball {
                    center: Vec2::zeros(),
                    radius: r,
                },
            }));
        }
        if let Some(r) = self.jerk_max {
            out.extend((0..t).map(|s| Constraint {
                quantity: Quantity::Jerk,
                step: s,
                set: ConvexSet::Ball {
                    center: Vec2::zeros(),
                    radius: r,
                },
            }));
        }
        let mut steps: Vec<usize> = self.halfspaces.iter().map(|(s, _)| *s).collect();
        steps.sort_unstable();
        steps.dedup();
        for s in steps {
            let hs = self
                .halfspaces
                .iter()
                .filter(|(k, _)| *k == s)
                .map(|(_, h)| *h)
                .collect();
            out.push(Constraint {
                quantity: Quantity::Position,
                step: s,
                set: ConvexSet::Polytope(hs),
            });
        }
        if let Some(tb) = &self.terminal {
            out.push(Constraint {
                quantity: Quantity::Position,
                step: tb.step,
                set: ConvexSet::Ball {
                    center: tb.center,
                    radius: tb.radius,
                },
            });
        }
        out.extend(self.extra.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub jerks: Vec<Vec2>,
    pub profile: ControlProfile,
    pub objective_value: f64,
    pub status: SolveStatus,
    /// Largest distance from any constrained quantity to its set.
    pub primal_residual: f64,
    pub iterations: usize,
    /// Per-iteration primal residuals when tracing is enabled.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative stationarity tolerance.
    pub dual_tol: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adapt_interval: usize,
    pub check_interval: usize,
    pub stall_window: usize,
    pub stall_threshold: f64,
    #[serde(skip)]
    pub trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 5000,
            dual_tol: 1e-5,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adapt_interval: 25,
            check_interval: 5,
            stall_window: 500,
            stall_threshold: 1e-2,
            trace: false,
        }
    }
}

/// Iterate state that can seed a later solve with the same constraint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    x: [Vec<f64>; 2],
    z: Vec<Vec2>,
    y: Vec<Vec2>,
    rho_scale: f64,
}

/// Impulse responses of the integrator chain and the free response from the
/// initial state.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub horizon: usize,
    pub dt: f64,
    /// `g[q][k]`: effect of a unit jerk at step `s` on quantity `q` at state `s + k`.
    g: [Vec<f64>; 3],
    free: [Vec<Vec2>; 3],
}

fn qidx(q: Quantity) -> usize {
    match q {
        Quantity::Position => 0,
        Quantity::Velocity => 1,
        Quantity::Acceleration => 2,
        Quantity::Jerk => 3,
    }
}

impl Dynamics {
    pub fn new(initial: &InitialState, horizon: usize, dt: f64) -> Self {
        let (mut p, mut v, a) = (0.0, 0.0, dt);
        let mut g = [
            vec![0.0; horizon + 1],
            vec![0.0; horizon + 1],
            vec![0.0; horizon + 1],
        ];
        // After the impulse at step 0 the state at step 1 has a = dt.
        g[2][1] = a;
        for k in 2..=horizon {
            let np = p + v * dt + 0.5 * a * dt * dt;
            let nv = v + a * dt;
            p = np;
            v = nv;
            g[0][k] = p;
            g[1][k] = v;
            g[2][k] = a;
        }
        let prof = propagate(initial, &vec![Vec2::zeros(); horizon], dt);
        Self {
            horizon,
            dt,
            g,
            free: [prof.p, prof.v, prof.a],
        }
    }

    /// Coefficients of `x_axis` on quantity `q` at `step`.
    pub fn row(&self, q: Quantity, step: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.horizon];
        match q {
            Quantity::Jerk => r[step] = 1.0,
            _ => {
                let g = &self.g[qidx(q)];
                for (s, v) in r.iter_mut().enumerate().take(step) {
                    *v = g[step - s];
                }
            }
        }
        r
    }

    pub fn free(&self, q: Quantity, step: usize) -> Vec2 {
        match q {
            Quantity::Jerk => Vec2::zeros(),
            _ => self.free[qidx(q)][step],
        }
    }

    /// Zero-state response of position, velocity and acceleration to the
    /// jerks `x`: `out[q][t-1]` is quantity `q` at state `t`.
    fn apply_all(&self, x: &[f64], out: &mut [Vec<f64>; 3]) {
        let dt = self.dt;
        let (mut p, mut v, mut a) = (0.0, 0.0, 0.0);
        for (t, j) in x.iter().enumerate().take(self.horizon) {
            p += v * dt + 0.5 * a * dt * dt;
            v += a * dt;
            a += j * dt;
            out[0][t] = p;
            out[1][t] = v;
            out[2][t] = a;
        }
    }

    /// Adjoint of [`Dynamics::apply_all`], accumulated into `out`.
    fn apply_all_t(&self, w: &[Vec<f64>; 3], out: &mut [f64]) {
        let dt = self.dt;
        let (mut lp, mut lv, mut la) = (0.0, 0.0, 0.0);
        for s in (0..self.horizon).rev() {
            // Costate of the state at step s + 1, then the jerk that produced it.
            lp += w[0][s];
            lv += w[1][s];
            la += w[2][s];
            out[s] += dt * la;
            let (np, nv, na) = (lp, lv + dt * lp, la + dt * lv + 0.5 * dt * dt * lp);
            lp = np;
            lv = nv;
            la = na;
        }
    }
}

/// Per-axis Hessian and linear term of the objective (cost = ½xᵀPx + qᵀx + c0).
struct AxisCost {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c0: f64,
}

fn axis_costs(obj: &QuadraticObjective, dynamics: &Dynamics) -> [AxisCost; 2] {
    let t = dynamics.horizon;
    let dt = dynamics.dt;
    let build = |k: usize| {
        let wa = obj.accel_weight[k];
        let wj = obj.jerk_weight[k];
        let a0 = dynamics.free[2][0][k];
        // a_t = a0 + dt * sum_{s<t} j_s, so (GaᵀGa)[s][r] = dt² (T - max(s, r)).
        let mut p = DMatrix::<f64>::zeros(t, t);
        for s in 0..t {
            for r in 0..t {
                p[(s, r)] = 2.0 * wa * dt * dt * (t - s.max(r)) as f64;
            }
            p[(s, s)] += 2.0 * wj;
        }
        let mu_a = obj.accel_mean[k];
        let mu_j = obj.jerk_mean[k];
        let q = DVector::from_iterator(
            t,
            (0..t).map(|s| 2.0 * wa * dt * (t - s) as f64 * (a0 - mu_a) - 2.0 * wj * mu_j),
        );
        let c0 = wa * t as f64 * (a0 - mu_a).powi(2) + wj * t as f64 * mu_j * mu_j;
        AxisCost { p, q, c0 }
    };
    [build(0), build(1)]
}

struct Block {
    q: Quantity,
    step: usize,
    set: ConvexSet,
    c: Vec2,
    rho: f64,
}

/// Solves the inner problem from a cold start.
pub fn solve(problem: &InnerProblem, settings: &SolverSettings) -> Result<InnerSolution> {
    solve_warm(problem, settings, None).map(|(s, _)| s)
}

pub fn solve_warm(
    problem: &InnerProblem,
    settings: &SolverSettings,
    warm: Option<&WarmStart>,
) -> Result<(InnerSolution, WarmStart)> {
    problem.validate()?;
    if !(settings.tol > 0.0 && settings.max_iter > 0) {
        return Err(Error::InvalidInput(
            "tol and max_iter must be positive".into(),
        ));
    }
    let t = problem.horizon;
    let dynamics = Dynamics::new(&problem.initial, t, problem.dt);
    let costs = axis_costs(&problem.objective, &dynamics);
    let scale = costs
        .iter()
        .map(|c| (0..t).map(|i| c.p[(i, i)]).fold(0.0, f64::max))
        .fold(1e-12, f64::max);

    // Constant blocks (no dependence on the jerks) are checked up front.
    let mut blocks: Vec<Block> = Vec::new();
    let mut constant_violation: f64 = 0.0;
    for c in problem.constraints() {
        let row = dynamics.row(c.quantity, c.step);
        let n2: f64 = row.iter().map(|v| v * v).sum();
        let off = dynamics.free(c.quantity, c.step);
        if n2 < 1e-18 {
            constant_violation = constant_violation.max(c.set.distance(off));
            continue;
        }
        blocks.push(Block {
            q: c.quantity,
            step: c.step,
            set: c.set,
            c: off,
            rho: settings.rho / n2,
        });
    }

    let sigma = settings.sigma;
    // Gram matrix of the constraint rows weighted by their base rho.
    let mut gram = DMatrix::<f64>::zeros(t, t);
    for b in &blocks {
        let row = dynamics.row(b.q, b.step);
        let nz = row.iter().rposition(|v| *v != 0.0).map_or(0, |i| i + 1);
        for i in 0..nz {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..nz {
                gram[(i, j)] += b.rho * row[i] * row[j];
            }
        }
    }
    let p_scaled: Vec<DMatrix<f64>> = costs.iter().map(|c| &c.p / scale).collect();
    let q_scaled: Vec<DVector<f64>> = costs.iter().map(|c| &c.q / scale).collect();
    let factor = |rho_scale: f64| -> Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        (0..2)
            .map(|k| {
                let mut m = &p_scaled[k] + &gram * rho_scale;
                for i in 0..t {
                    m[(i, i)] += sigma;
                }
                m.cholesky().expect("system matrix is positive definite")
            })
            .collect()
    };

    let nb = blocks.len();
    let (mut x, mut z, mut y, mut rho_scale) = match warm {
        Some(w) if w.x[0].len() == t && w.z.len() == nb => {
            (w.x.clone(), w.z.clone(), w.y.clone(), w.rho_scale)
        }
        _ => {
            let x = [vec![0.0; t], vec![0.0; t]];
            (x, vec![Vec2::zeros(); nb], vec![Vec2::zeros(); nb], 1.0)
        }
    };
    if warm.is_none_or(|w| w.z.len() != nb || w.x[0].len() != t) {
        // Start the split variables at the projected free response.
        for (i, b) in blocks.iter().enumerate() {
            z[i] = b.set.project(b.c);
        }
    }
    let mut chol = factor(rho_scale);

    let mut vals = vec![vec![Vec2::zeros(); t]; 4];
    let eval = |x: &[Vec<f64>; 2], vals: &mut Vec<Vec<Vec2>>| {
        let mut buf = [vec![0.0; t], vec![0.0; t], vec![0.0; t]];
        for k in 0..2 {
            dynamics.apply_all(&x[k], &mut buf);
            for q in 0..3 {
                for s in 0..t {
                    vals[q][s][k] = buf[q][s];
                }
            }
        }
        for s in 0..t {
            vals[3][s] = Vec2::new(x[0][s], x[1][s]);
        }
    };
    let value_of = |vals: &Vec<Vec<Vec2>>, b: &Block| -> Vec2 {
        match b.q {
            Quantity::Jerk => vals[3][b.step],
            q => vals[qidx(q)][b.step - 1] + b.c,
        }
    };
    // Adds sum_b row_b * w_b into out (per axis).
    let adjoint = |w: &[Vec2], out: &mut [Vec<f64>; 2]| {
        let mut agg = vec![vec![Vec2::zeros(); t]; 3];
        for (b, wb) in blocks.iter().zip(w) {
            match b.q {
                Quantity::Jerk => {
                    out[0][b.step] += wb.x;
                    out[1][b.step] += wb.y;
                }
                q => agg[qidx(q)][b.step - 1] += wb,
            }
        }
        let mut buf = [vec![0.0; t], vec![0.0; t], vec![0.0; t]];
        for k in 0..2 {
            for q in 0..3 {
                for s in 0..t {
                    buf[q][s] = agg[q][s][k];
                }
            }
            dynamics.apply_all_t(&buf, &mut out[k]);
        }
    };

    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut stall_ref = f64::INFINITY;
    let mut stall_best = f64::INFINITY;
    let mut zt = vec![Vec2::zeros(); nb];

    if constant_violation > settings.tol {
        status = SolveStatus::Infeasible;
    } else {
        for it in 1..=settings.max_iter {
            iterations = it;
            // x-update
            let w: Vec<Vec2> = blocks
                .iter()
                .enumerate()
                .map(|(i, b)| (z[i] - b.c) * (b.rho * rho_scale) - y[i])
                .collect();
            let mut rhs = [
                x[0].iter().map(|v| sigma * v).collect::<Vec<f64>>(),
                x[1].iter().map(|v| sigma * v).collect::<Vec<f64>>(),
            ];
            for k in 0..2 {
                for s in 0..t {
                    rhs[k][s] -= q_scaled[k][s];
                }
            }
            adjoint(&w, &mut rhs);
            let mut xt = [vec![0.0; t], vec![0.0; t]];
            for k in 0..2 {
                let sol = chol[k].solve(&DVector::from_column_slice(&rhs[k]));
                xt[k].copy_from_slice(sol.as_slice());
            }
            eval(&xt, &mut vals);
            for (i, b) in blocks.iter().enumerate() {
                zt[i] = value_of(&vals, b);
            }
            let a = settings.alpha;
            for k in 0..2 {
                for s in 0..t {
                    x[k][s] = a * xt[k][s] + (1.0 - a) * x[k][s];
                }
            }
            for (i, b) in blocks.iter().enumerate() {
                let r = b.rho * rho_scale;
                let zeta = zt[i] * a + z[i] * (1.0 - a);
                let zn = b.set.project(zeta + y[i] / r);
                y[i] += (zeta - zn) * r;
                z[i] = zn;
            }

            let check =
                settings.trace || it % settings.check_interval == 0 || it == settings.max_iter;
            if !check {
                continue;
            }
            eval(&x, &mut vals);
            let mut prim_res: f64 = 0.0;
            let mut set_res: f64 = 0.0;
            let mut ax_norm: f64 = 0.0;
            let mut z_norm: f64 = 0.0;
            for (i, b) in blocks.iter().enumerate() {
                let v = value_of(&vals, b);
                prim_res = prim_res.max((v - z[i]).norm());
                set_res = set_res.max(b.set.distance(v));
                ax_norm = ax_norm.max(v.norm());
                z_norm = z_norm.max(z[i].norm());
            }
            if settings.trace {
                trace.push(set_res);
            }
            // Stationarity: P x + q + Aᵀ y.
            let mut aty = [vec![0.0; t], vec![0.0; t]];
            adjoint(&y, &mut aty);
            let mut dual: f64 = 0.0;
            let mut scale_d: f64 = 0.0;
            for k in 0..2 {
                let xv = DVector::from_column_slice(&x[k]);
                let px = &p_scaled[k] * &xv;
                for s in 0..t {
                    dual = dual.max((px[s] + q_scaled[k][s] + aty[k][s]).abs());
                    scale_d = scale_d
                        .max(px[s].abs())
                        .max(q_scaled[k][s].abs())
                        .max(aty[k][s].abs());
                }
            }
            let dual_ok = dual <= settings.dual_tol * (1.0 + scale_d);
            if set_res <= settings.tol && prim_res <= settings.tol * 10.0 && dual_ok {
                status = SolveStatus::Optimal;
                break;
            }
            // Stagnation heuristic for infeasibility.
            stall_best = stall_best.min(prim_res);
            if it % settings.stall_window == 0 {
                if stall_best > settings.stall_threshold && stall_best > 0.99 * stall_ref {
                    status = SolveStatus::Infeasible;
                    break;
                }
                stall_ref = stall_best;
                stall_best = f64::INFINITY;
            }
            if it % settings.adapt_interval == 0 {
                let prim_rel = prim_res / ax_norm.max(z_norm).max(1e-12);
                let dual_rel = dual / scale_d.max(1e-12);
                let ratio = (prim_rel / dual_rel.max(1e-30)).sqrt().clamp(1e-3, 1e3);
                if !(0.2..=5.0).contains(&ratio) {
                    rho_scale = (rho_scale * ratio).clamp(1e-6, 1e6);
                    chol = factor(rho_scale);
                }
            }
        }
    }

    let jerks: Vec<Vec2> = (0..t).map(|s| Vec2::new(x[0][s], x[1][s])).collect();
    let profile = propagate(&problem.initial, &jerks, problem.dt);
    let objective_value = problem.objective.evaluate(&profile);
    let primal_residual = constraint_violation(problem, &profile);
    Ok((
        InnerSolution {
            jerks,
            profile,
            objective_value,
            status,
            primal_residual,
            iterations,
            trace,
        },
        WarmStart { x, z, y, rho_scale },
    ))
}

/// Largest distance of any constrained quantity of `profile` to its set,
/// evaluated independently of the solver state.
pub fn constraint_violation(problem: &InnerProblem, profile: &ControlProfile) -> f64 {
    problem
        .constraints()
        .iter()
        .map(|c| {
            let v = match c.quantity {
                Quantity::Position => profile.p[c.step],
                Quantity::Velocity => profile.v[c.step],
                Quantity::Acceleration => profile.a[c.step],
                Quantity::Jerk => profile.j[c.step],
            };
            c.set.distance(v)
        })
        .fold(0.0, f64::max)
}

/// Writes an iteration trace as CSV (`iteration,primal_residual`).
pub fn write_trace_csv(solution: &InnerSolution, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,primal_residual")?;
    for (i, r) in solution.trace.iter().enumerate() {
        writeln!(out, "{},{r:e}", i + 1)?;
    }
    Ok(())
}

/// Exact minimum of the objective subject only to a ball on the position at
/// one step. Cheap to evaluate for many steps and centres once built; used
/// to order and prune candidate problems.
pub struct TerminalLowerBound {
    dynamics: Dynamics,
    /// Per axis: unconstrained optimum cost and P^{-1}.
    base: [(f64, DMatrix<f64>, DVector<f64>); 2],
    objective: QuadraticObjective,
}

impl TerminalLowerBound {
    pub fn new(
        initial: &InitialState,
        horizon: usize,
        dt: f64,
        objective: &QuadraticObjective,
    ) -> Self {
        let dynamics = Dynamics::new(initial, horizon, dt);
        let costs = axis_costs(objective, &dynamics);
        let base = costs.map(|c| {
            let chol =
                c.p.clone()
                    .cholesky()
                    .expect("objective Hessian is positive definite");
            let pinv = chol.inverse();
            let xstar = -(&pinv * &c.q);
            let fstar = 0.5 * xstar.dot(&(&c.p * &xstar)) + c.q.dot(&xstar) + c.c0;
            (fstar, pinv, xstar)
        });
        Self {
            dynamics,
            base,
            objective: *objective,
        }
    }

    pub fn unconstrained(&self) -> f64 {
        self.base[0].0 + self.base[1].0
    }

    /// Unconstrained optimal profile.
    pub fn unconstrained_position(&self, step: usize) -> Vec2 {
        let row = self.dynamics.row(Quantity::Position, step);
        let f = self.dynamics.free(Quantity::Position, step);
        Vec2::new(
            f.x + row
                .iter()
                .zip(self.base[0].2.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>(),
            f.y + row
                .iter()
                .zip(self.base[1].2.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>(),
        )
    }

    pub fn objective(&self) -> &QuadraticObjective {
        &self.objective
    }

    pub fn bound(&self, step: usize, center: Vec2, radius: f64) -> f64 {
        let row = DVector::from_vec(self.dynamics.row(Quantity::Position, step));
        let pstar = self.unconstrained_position(step);
        let s = [
            row.dot(&(&self.base[0].1 * &row)),
            row.dot(&(&self.base[1].1 * &row)),
        ];
        let base = self.unconstrained();
        if (pstar - center).norm() <= radius {
            return base;
        }
        if s[0] < 1e-18 && s[1] < 1e-18 {
            // Position fixed by the initial state; the ball is unreachable.
            return f64::INFINITY;
        }
        let point = |mu: f64| {
            Vec2::new(
                (pstar.x / s[0].max(1e-300) + mu * center.x) / (1.0 / s[0].max(1e-300) + mu),
                (pstar.y / s[1].max(1e-300) + mu * center.y) / (1.0 / s[1].max(1e-300) + mu),
            )
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while (point(hi) - center).norm() > radius && hi < 1e30 {
            hi *= 4.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (point(mid) - center).norm() > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = point(hi);
        let extra = |k: usize| {
            if s[k] < 1e-18 {
                0.0
            } else {
                (p[k] - pstar[k]).powi(2) / (2.0 * s[k])
            }
        };
        base + extra(0) + extra(1)
    }
}
