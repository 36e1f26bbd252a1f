//! Planar geometry: segments, polylines, oriented boxes and convex quads.

use nalgebra::Vector2;

pub type Vec2 = Vector2<f64>;

const EPS: f64 = 1e-9;

#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[inline]
pub fn unit_from_angle(theta: f64) -> Vec2 {
    Vec2::new(theta.cos(), theta.sin())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Closest point on the segment and its parameter in `[0, 1]`.
    pub fn closest_point(&self, p: Vec2) -> (Vec2, f64) {
        let d = self.b - self.a;
        let len2 = d.norm_squared();
        if len2 <= f64::MIN_POSITIVE {
            return (self.a, 0.0);
        }
        let t = ((p - self.a).dot(&d) / len2).clamp(0.0, 1.0);
        (self.a + d * t, t)
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        (self.closest_point(p).0 - p).norm()
    }

    pub fn at(&self, t: f64) -> Vec2 {
        self.a + (self.b - self.a) * t
    }
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    /// Arclength of the projected point, in `[0, total length]`.
    pub arc: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub distance: f64,
    pub segment: usize,
    pub point: Vec2,
    pub tangent: Vec2,
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Projects `p` onto the nearest point of the polyline. Ties between
/// segments resolve to the earliest segment.
pub fn project_onto_polyline(p: Vec2, points: &[Vec2]) -> PolylineProjection {
    assert!(points.len() >= 2, "polyline needs at least two points");
    let mut best: Option<PolylineProjection> = None;
    let mut arc_start = 0.0;
    for (i, w) in points.windows(2).enumerate() {
        let seg = Segment::new(w[0], w[1]);
        let len = seg.length();
        let (q, t) = seg.closest_point(p);
        let dist = (q - p).norm();
        if best.is_none_or(|b| dist < b.distance - EPS) {
            let tangent = if len > 0.0 {
                (w[1] - w[0]) / len
            } else {
                Vec2::new(1.0, 0.0)
            };
            best = Some(PolylineProjection {
                arc: arc_start + t * len,
                lateral: cross(tangent, p - q),
                distance: dist,
                segment: i,
                point: q,
                tangent,
            });
        }
        arc_start += len;
    }
    let mut proj = best.expect("non-empty polyline");
    if proj.distance > 0.0 && proj.lateral.abs() < proj.distance * (1.0 - 1e-12) {
        // Projection onto a vertex: lateral sign from the tangent, magnitude from distance.
        proj.lateral = proj.distance.copysign(if proj.lateral == 0.0 {
            1.0
        } else {
            proj.lateral
        });
    }
    proj
}

/// Arclength along the polyline of the projection of `p`, clamped to the
/// polyline extent.
pub fn arc_progress(p: Vec2, points: &[Vec2]) -> f64 {
    project_onto_polyline(p, points).arc
}

/// Point and unit tangent at arclength `s` (clamped; extrapolates linearly
/// past either end when `extrapolate` is set).
pub fn point_at_arc(points: &[Vec2], s: f64, extrapolate: bool) -> (Vec2, Vec2) {
    assert!(points.len() >= 2);
    let mut acc = 0.0;
    let n = points.len();
    for i in 0..n - 1 {
        let d = points[i + 1] - points[i];
        let len = d.norm();
        if len <= 0.0 {
            continue;
        }
        let tangent = d / len;
        if s <= acc + len || i == n - 2 {
            let mut local = s - acc;
            if !extrapolate {
                local = local.clamp(0.0, len);
            } else if i == 0 && s < 0.0 {
                local = s;
            }
            return (points[i] + tangent * local, tangent);
        }
        acc += len;
    }
    let d = points[n - 1] - points[n - 2];
    (points[n - 1], d.normalize())
}

/// Oriented rectangle used for footprint collision checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            length,
            width,
        }
    }

    pub fn axes(&self) -> (Vec2, Vec2) {
        let u = unit_from_angle(self.heading);
        (u, Vec2::new(-u.y, u.x))
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (u, n) = self.axes();
        let hl = u * (0.5 * self.length);
        let hw = n * (0.5 * self.width);
        [
            self.center + hl + hw,
            self.center - hl + hw,
            self.center - hl - hw,
            self.center + hl - hw,
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (u, n) = self.axes();
        let d = p - self.center;
        d.dot(&u).abs() <= 0.5 * self.length && d.dot(&n).abs() <= 0.5 * self.width
    }

    fn half_extent_along(&self, axis: Vec2) -> f64 {
        let (u, n) = self.axes();
        0.5 * self.length * u.dot(&axis).abs() + 0.5 * self.width * n.dot(&axis).abs()
    }

    /// Separating-axis test. Touching boxes count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let (u1, n1) = self.axes();
        let (u2, n2) = other.axes();
        let d = other.center - self.center;
        [u1, n1, u2, n2].iter().all(|&axis| {
            d.dot(&axis).abs() <= self.half_extent_along(axis) + other.half_extent_along(axis)
        })
    }
}

pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    a.overlaps(b)
}

pub fn center_distance_check(pa: Vec2, pb: Vec2, d_thres: f64) -> bool {
    (pa - pb).norm() <= d_thres
}

/// Counter-clockwise convex quadrilateral (lane rectangle).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexQuad {
    pub corners: [Vec2; 4],
}

impl ConvexQuad {
    /// Rectangle of the given width swept along the segment `a -> b`.
    pub fn swept(a: Vec2, b: Vec2, width: f64) -> Self {
        let t = (b - a).normalize();
        let n = Vec2::new(-t.y, t.x) * (0.5 * width);
        Self {
            corners: [a - n, b - n, b + n, a + n],
        }
    }

    pub fn edges(&self) -> [Segment; 4] {
        let c = &self.corners;
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }

    /// Outward normals and offsets: the quad is `{x : n_i . x <= o_i}`.
    fn halfplanes(&self) -> [(Vec2, f64); 4] {
        let e = self.edges();
        e.map(|s| {
            let d = (s.b - s.a).normalize();
            let n = Vec2::new(d.y, -d.x);
            (n, n.dot(&s.a))
        })
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        self.halfplanes().iter().all(|(n, o)| n.dot(&p) <= o + tol)
    }

    /// Parameter interval of `seg` lying inside the (closed) quad, if any.
    pub fn clip(&self, seg: &Segment, tol: f64) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let d = seg.b - seg.a;
        for (n, o) in self.halfplanes() {
            let num = o + tol - n.dot(&seg.a);
            let den = n.dot(&d);
            if den.abs() < 1e-15 {
                if num < 0.0 {
                    return None;
                }
                continue;
            }
            let t = num / den;
            if den > 0.0 {
                t1 = t1.min(t);
            } else {
                t0 = t0.max(t);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Boundary of a union of convex quads: every edge piece not covered by
/// another quad.
pub fn union_boundary(quads: &[ConvexQuad]) -> Vec<Segment> {
    let mut out = Vec::new();
    for (i, q) in quads.iter().enumerate() {
        for edge in q.edges() {
            let len = edge.length();
            if len <= EPS {
                continue;
            }
            let mut covered: Vec<(f64, f64)> = quads
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .filter_map(|(_, other)| other.clip(&edge, 1e-9))
                .filter(|(a, b)| (b - a) * len > 1e-6)
                .collect();
            covered.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut cursor = 0.0;
            for (a, b) in covered {
                if a > cursor && (a - cursor) * len > EPS {
                    out.push(Segment::new(edge.at(cursor), edge.at(a)));
                }
                cursor = cursor.max(b);
            }
            if cursor < 1.0 && (1.0 - cursor) * len > EPS {
                out.push(Segment::new(edge.at(cursor), edge.b));
            }
        }
    }
    out
}
