//! Small goal-conditioned completion network.
//!
//! Weight file (JSON):
//!
//! ```json
//! {"layers": [{"rows": 64, "cols": 12, "w": [...row-major...], "b": [...]}, ...],
//!  "activation": "tanh",
//!  "input_norm": {"mean": [12 values], "std": [12 values]},
//!  "output_norm": {"mean": [2H values], "std": [2H values]},
//!  "feature_version": 1}
//! ```
//!
//! Features, all in the frame of the agent's current pose:
//! `[p0.x, p0.y, v0.x, v0.y, a0.x, a0.y, sin(h0), cos(h0), goal.x, goal.y,
//! horizon_seconds, terminal_speed]`. The output holds `H` interleaved local
//! positions `x1, y1, ..., xH, yH` for steps `1..=H`. Hidden layers use tanh;
//! the last layer is linear.

use super::PlanRequest;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::kinematics::ControlProfile;
use crate::scenario::{from_local_frame, to_local_frame, AgentState};
use serde::{Deserialize, Serialize};

pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedPlannerWeights {
    pub layers: Vec<Layer>,
    pub activation: String,
    pub input_norm: Normalization,
    pub output_norm: Normalization,
    pub feature_version: u32,
}

fn dim_err(layer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Dimension {
        layer: layer.into(),
        message: message.into(),
    }
}

impl LearnedPlannerWeights {
    pub fn from_json(s: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }

    /// All-zero network for `horizon` output steps.
    pub fn zeros(hidden: &[usize], horizon: usize) -> Self {
        let mut dims = vec![FEATURE_DIM];
        dims.extend_from_slice(hidden);
        dims.push(2 * horizon);
        let layers = dims
            .windows(2)
            .map(|d| Layer {
                rows: d[1],
                cols: d[0],
                w: vec![0.0; d[0] * d[1]],
                b: vec![0.0; d[1]],
            })
            .collect();
        Self {
            layers,
            activation: "tanh".into(),
            input_norm: Normalization::identity(FEATURE_DIM),
            output_norm: Normalization::identity(2 * horizon),
            feature_version: FEATURE_VERSION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_version != FEATURE_VERSION {
            return Err(Error::FeatureVersion(self.feature_version));
        }
        if self.activation != "tanh" {
            return Err(Error::InvalidInput(format!(
                "unsupported activation {:?}",
                self.activation
            )));
        }
        if self.layers.is_empty() {
            return Err(dim_err("layers", "at least one layer is required"));
        }
        let mut width = FEATURE_DIM;
        for (i, l) in self.layers.iter().enumerate() {
            let name = format!("layers[{i}]");
            if l.cols != width {
                return Err(dim_err(
                    name,
                    format!("expects {} inputs, previous width is {width}", l.cols),
                ));
            }
            if l.w.len() != l.rows * l.cols {
                return Err(dim_err(
                    name,
                    format!("w has {} entries, expected {}", l.w.len(), l.rows * l.cols),
                ));
            }
            if l.b.len() != l.rows {
                return Err(dim_err(
                    name,
                    format!("b has {} entries, expected {}", l.b.len(), l.rows),
                ));
            }
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} has non-finite weights"
                )));
            }
            width = l.rows;
        }
        if width == 0 || !width.is_multiple_of(2) {
            return Err(dim_err(
                format!("layers[{}]", self.layers.len() - 1),
                "output width must be even and positive",
            ));
        }
        for (name, norm, n) in [
            ("input_norm", &self.input_norm, FEATURE_DIM),
            ("output_norm", &self.output_norm, width),
        ] {
            if norm.mean.len() != n || norm.std.len() != n {
                return Err(dim_err(name, format!("expected {n} mean and std entries")));
            }
            if norm.std.iter().any(|s| !(s.is_finite() && *s > 0.0))
                || norm.mean.iter().any(|m| !m.is_finite())
            {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite with positive std"
                )));
            }
        }
        Ok(())
    }

    /// Number of output steps.
    pub fn horizon(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows / 2)
    }

    /// Raw forward pass on a feature vector, output denormalized.
    pub fn forward(&self, features: &[f64; FEATURE_DIM]) -> Vec<f64> {
        let mut h: Vec<f64> = features
            .iter()
            .zip(self.input_norm.mean.iter().zip(&self.input_norm.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = l.b.clone();
            for (r, o) in out.iter_mut().enumerate() {
                let row = &l.w[r * l.cols..(r + 1) * l.cols];
                *o += row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
            }
            if i < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = out;
        }
        h.iter()
            .zip(self.output_norm.mean.iter().zip(&self.output_norm.std))
            .map(|(y, (m, s))| y * s + m)
            .collect()
    }
}

/// Feature vector of a request in the frame of the current pose.
pub fn features(req: &PlanRequest) -> [f64; FEATURE_DIM] {
    let c = &req.current;
    let frame = AgentState::from_position(c.p, c.heading);
    let (s, co) = c.heading.sin_cos();
    let rot = |v: Vec2| Vec2::new(co * v.x + s * v.y, -s * v.x + co * v.y);
    let p0 = to_local_frame(&AgentState::from_position(c.p, c.heading), &frame);
    let goal = to_local_frame(&AgentState::from_position(req.goal, 0.0), &frame);
    let v0 = rot(c.v);
    let a0 = rot(c.a);
    [
        p0.x,
        p0.y,
        v0.x,
        v0.y,
        a0.x,
        a0.y,
        p0.heading.sin(),
        p0.heading.cos(),
        goal.x,
        goal.y,
        req.horizon_steps as f64 * req.dt,
        req.terminal_velocity.norm(),
    ]
}

/// Local positions for steps `1..=H` of the request. The network grid is
/// resampled by linear interpolation in normalized time when the request
/// horizon differs from the network's. An output that is identically zero
/// falls back to constant-speed straight-line motion to the goal.
pub fn plan_learned_local(req: &PlanRequest, weights: &LearnedPlannerWeights) -> Result<Vec<Vec2>> {
    if req.horizon_steps == 0 {
        return Err(Error::InvalidInput(
            "horizon_steps must be at least 1".into(),
        ));
    }
    weights.validate()?;
    let f = features(req);
    let out = weights.forward(&f);
    let n = req.horizon_steps;
    let goal = Vec2::new(f[8], f[9]);
    if out.iter().all(|v| *v == 0.0) {
        return Ok((1..=n).map(|k| goal * (k as f64 / n as f64)).collect());
    }
    let m = out.len() / 2;
    let net: Vec<Vec2> = (0..m)
        .map(|k| Vec2::new(out[2 * k], out[2 * k + 1]))
        .collect();
    if m == n {
        return Ok(net);
    }
    // Network step k (0-based) sits at fraction (k + 1) / m; fraction 0 is the origin.
    let at = |frac: f64| {
        let x = frac * m as f64;
        let i = x.floor() as usize;
        let w = x - i as f64;
        let point = |k: usize| {
            if k == 0 {
                Vec2::zeros()
            } else {
                net[(k - 1).min(m - 1)]
            }
        };
        point(i) * (1.0 - w) + point(i + 1) * w
    };
    Ok((1..=n).map(|k| at(k as f64 / n as f64)).collect())
}

pub fn plan_learned(req: &PlanRequest, weights: &LearnedPlannerWeights) -> Result<ControlProfile> {
    let local = plan_learned_local(req, weights)?;
    let c = &req.current;
    let frame = AgentState::from_position(c.p, c.heading);
    let mut positions = Vec::with_capacity(local.len() + 1);
    positions.push(c.p);
    positions.extend(
        local
            .iter()
            .map(|q| from_local_frame(&AgentState::from_position(*q, 0.0), &frame).position()),
    );
    Ok(ControlProfile::from_positions(c, positions, req.dt))
}
