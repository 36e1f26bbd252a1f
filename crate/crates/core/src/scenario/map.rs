use super::{normalize_angle, AgentState};
use crate::error::ValidationError;
use crate::geometry::{
    polyline_length, project_onto_polyline, union_boundary, ConvexQuad, PolylineProjection,
    Segment, Vec2,
};

/// Directed lane centerline with a constant width.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub width: f64,
    pub points: Vec<AgentState>,
    centerline: Vec<Vec2>,
}

impl Lane {
    pub fn new(width: f64, points: Vec<AgentState>) -> Self {
        let centerline = points.iter().map(AgentState::position).collect();
        Self {
            width,
            points,
            centerline,
        }
    }

    /// Builds a lane through `points`, deriving each heading from the local
    /// travel direction.
    pub fn from_positions(width: f64, positions: &[Vec2]) -> Self {
        let n = positions.len();
        let points = positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = if i + 1 < n {
                    positions[i + 1] - positions[i]
                } else {
                    positions[i] - positions[i - 1]
                };
                AgentState::new(p.x, p.y, d.y.atan2(d.x))
            })
            .collect();
        Self::new(width, points)
    }

    pub fn centerline(&self) -> &[Vec2] {
        &self.centerline
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.centerline)
    }

    pub fn project(&self, p: Vec2) -> PolylineProjection {
        project_onto_polyline(p, &self.centerline)
    }

    /// Polyline from the projection of `start` to the end of the lane.
    pub fn route_from(&self, start: Vec2) -> Vec<Vec2> {
        let proj = self.project(start);
        let mut route = vec![proj.point];
        for q in &self.centerline[proj.segment + 1..] {
            if (q - route[route.len() - 1]).norm() > 1e-9 {
                route.push(*q);
            }
        }
        if route.len() < 2 {
            route.push(*self.centerline.last().unwrap());
            if (route[1] - route[0]).norm() <= 1e-9 {
                route[1] = route[0] + proj.tangent * 1e-3;
            }
        }
        route
    }
}

/// Lane map. The drivable area is the union of rectangles swept along each
/// lane segment; its boundary is cached for signed-distance queries.
#[derive(Debug, Clone, Default)]
pub struct MapModel {
    pub lanes: Vec<Lane>,
    quads: Vec<ConvexQuad>,
    boundary: Vec<Segment>,
}

impl PartialEq for MapModel {
    fn eq(&self, other: &Self) -> bool {
        self.lanes == other.lanes
    }
}

impl MapModel {
    pub fn new(lanes: Vec<Lane>) -> Result<Self, ValidationError> {
        for (i, lane) in lanes.iter().enumerate() {
            let path = format!("map.lanes[{i}]");
            if !(lane.width.is_finite() && lane.width > 0.0) {
                return Err(ValidationError::new(
                    format!("{path}.width"),
                    "must be positive",
                ));
            }
            if lane.points.len() < 2 {
                return Err(ValidationError::new(
                    format!("{path}.points"),
                    "needs at least 2 points",
                ));
            }
            for (k, p) in lane.points.iter().enumerate() {
                if !p.is_finite() {
                    return Err(ValidationError::new(
                        format!("{path}.points[{k}]"),
                        "non-finite coordinate",
                    ));
                }
                if k > 0 && (p.position() - lane.points[k - 1].position()).norm() <= 1e-9 {
                    return Err(ValidationError::new(
                        format!("{path}.points[{k}]"),
                        "coincides with the previous point",
                    ));
                }
            }
        }
        let quads: Vec<ConvexQuad> = lanes
            .iter()
            .flat_map(|lane| {
                lane.centerline()
                    .windows(2)
                    .map(|w| ConvexQuad::swept(w[0], w[1], lane.width))
                    .collect::<Vec<_>>()
            })
            .collect();
        let boundary = union_boundary(&quads);
        Ok(Self {
            lanes,
            quads,
            boundary,
        })
    }

    pub fn boundary(&self) -> &[Segment] {
        &self.boundary
    }

    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.quads.iter().any(|q| q.contains(p, 0.0))
    }

    /// Signed distance to the drivable-area boundary: positive inside,
    /// negative outside.
    pub fn d_margin(&self, p: Vec2) -> f64 {
        if self.quads.is_empty() {
            return f64::NEG_INFINITY;
        }
        let dist = self
            .boundary
            .iter()
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min);
        if self.quads.iter().any(|q| q.contains(p, 1e-12)) {
            dist
        } else {
            -dist
        }
    }

    /// Nearest lane to `p` with its projection.
    pub fn nearest_lane(&self, p: Vec2) -> Option<(usize, PolylineProjection)> {
        self.lanes
            .iter()
            .enumerate()
            .map(|(i, l)| (i, l.project(p)))
            .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
    }

    /// The lane an agent at `pose` is driving in: the closest lane whose
    /// direction agrees with the heading and that contains the pose (with
    /// half a meter of slack).
    pub fn lane_for_pose(&self, pose: &AgentState) -> Option<usize> {
        let p = pose.position();
        self.lanes
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let proj = l.project(p);
                let along =
                    proj.tangent.x * pose.heading.cos() + proj.tangent.y * pose.heading.sin();
                (proj.distance <= 0.5 * l.width + 0.5 && along > 0.0).then_some((i, proj.distance))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Lanes whose start continues the end of `lane`.
    pub fn successors(&self, lane: usize) -> Vec<usize> {
        let l = &self.lanes[lane];
        let end = *l.points.last().unwrap();
        self.lanes
            .iter()
            .enumerate()
            .filter(|(i, other)| {
                let start = other.points[0];
                *i != lane
                    && (start.position() - end.position()).norm() < 0.5
                    && normalize_angle(start.heading - end.heading).abs()
                        < std::f64::consts::FRAC_PI_2
            })
            .map(|(i, _)| i)
            .collect()
    }
}
