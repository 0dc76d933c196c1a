//! Planar points, poses and polylines in the world frame (meters, +x east,
//! +y north, headings CCW from +x) and the robot ego frame (+x forward,
//! +y left).

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (*self - other).norm()
    }

    pub fn dot(&self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(&self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    /// Bearing of the vector in radians, CCW from +x.
    pub fn angle(&self) -> f64 {
        libm::atan2(self.y, self.x)
    }

    pub fn lerp(&self, other: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }

    pub fn rotate(&self, angle: f64) -> Point2 {
        let (s, c) = libm::sincos(angle);
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2::new(x, y)
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid can land exactly on -π after the shift for inputs such as 3π.
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: Point2::new(x, y),
            heading: normalize_angle(heading),
        }
    }

    pub fn from_point(position: Point2, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }
}

/// A position stamped with simulation time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub t: f64,
    pub p: Point2,
}

impl TimedPoint {
    pub fn new(t: f64, p: Point2) -> Self {
        Self { t, p }
    }
}

/// Expresses a world point in the frame whose origin is `pose`.
pub fn to_ego_frame(pose: Pose2, p: Point2) -> Point2 {
    (p - pose.position).rotate(-pose.heading)
}

/// Inverse of [`to_ego_frame`].
pub fn from_ego_frame(pose: Pose2, p_ego: Point2) -> Point2 {
    p_ego.rotate(pose.heading) + pose.position
}

/// Ordered sequence of at least one finite point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polyline {
    points: Vec<Point2>,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        Ok(Self { points })
    }

    pub fn from_xy(points: &[(f64, f64)]) -> Result<Self, GeometryError> {
        Self::new(points.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    pub fn push(&mut self, p: Point2) -> Result<(), GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite(self.points.len()));
        }
        self.points.push(p);
        Ok(())
    }

    pub fn length(&self) -> f64 {
        polyline_length(self)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    /// Cumulative arclength at every vertex, starting with 0.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.points.len());
        out.push(0.0);
        for (a, b) in self.segments() {
            acc += a.distance(b);
            out.push(acc);
        }
        out
    }

    /// Point at arclength `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point2 {
        let cum = self.cumulative_lengths();
        point_at_with(&self.points, &cum, s)
    }

    /// Arclength of the point on the polyline closest to `p`.
    pub fn project(&self, p: Point2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut acc = 0.0;
        if self.points.len() == 1 {
            return 0.0;
        }
        for (a, b) in self.segments() {
            let seg = b - a;
            let len2 = seg.dot(seg);
            let t = if len2 > 0.0 {
                ((p - a).dot(seg) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = a.lerp(b, t).distance(p);
            if d < best.0 {
                best = (d, acc + t * len2.sqrt());
            }
            acc += len2.sqrt();
        }
        best.1
    }
}

impl TryFrom<Vec<Point2>> for Polyline {
    type Error = GeometryError;
    fn try_from(points: Vec<Point2>) -> Result<Self, Self::Error> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Point2> {
    fn from(line: Polyline) -> Self {
        line.points
    }
}

fn point_at_with(points: &[Point2], cum: &[f64], s: f64) -> Point2 {
    if s <= 0.0 {
        return points[0];
    }
    let total = cum[cum.len() - 1];
    if s >= total {
        return points[points.len() - 1];
    }
    // First vertex whose cumulative length reaches s.
    let i = cum.partition_point(|&c| c < s).max(1);
    let seg_len = cum[i] - cum[i - 1];
    if seg_len <= 0.0 {
        return points[i];
    }
    points[i - 1].lerp(points[i], (s - cum[i - 1]) / seg_len)
}

/// Sum of Euclidean segment lengths.
pub fn polyline_length(line: &Polyline) -> f64 {
    line.segments().map(|(a, b)| a.distance(b)).sum()
}

/// Points every `spacing` meters of arclength from the first vertex, plus the
/// original endpoint when the last multiple falls short of it.
pub fn resample_by_arclength(line: &Polyline, spacing: f64) -> Result<Polyline, GeometryError> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(GeometryError::InvalidSpacing(spacing));
    }
    let cum = line.cumulative_lengths();
    let total = cum[cum.len() - 1];
    if total <= 0.0 {
        return Err(GeometryError::DegenerateInput);
    }
    const EPS: f64 = 1e-9;
    let steps = (total / spacing + EPS).floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    for k in 0..=steps {
        let s = k as f64 * spacing;
        if s > total - EPS && k > 0 {
            break;
        }
        out.push(point_at_with(&line.points, &cum, s));
    }
    out.push(line.last());
    Polyline::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Point2, b: Point2, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    #[test]
    fn ego_frame_examples() {
        let p = to_ego_frame(Pose2::new(0.0, 0.0, 0.0), Point2::new(1.0, 0.0));
        assert!(close(p, Point2::new(1.0, 0.0), 1e-12));
        let p = to_ego_frame(Pose2::new(0.0, 0.0, FRAC_PI_2), Point2::new(0.0, 1.0));
        assert!(close(p, Point2::new(1.0, 0.0), 1e-12));
        let p = from_ego_frame(Pose2::new(1.0, 1.0, PI), Point2::new(1.0, 0.0));
        assert!(close(p, Point2::new(0.0, 1.0), 1e-12));
    }

    #[test]
    fn normalize_edges() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(2.0 * PI)).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn resample_straight_line() {
        let line = Polyline::from_xy(&[(0.0, 0.0), (2.0, 0.0)]).unwrap();
        let r = resample_by_arclength(&line, 0.5).unwrap();
        let xs: Vec<f64> = r.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn resample_spacing_longer_than_line() {
        let line = Polyline::from_xy(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        let r = resample_by_arclength(&line, 10.0).unwrap();
        assert_eq!(r.points(), &[Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)]);
    }

    #[test]
    fn resample_closed_square() {
        let sq = Polyline::from_xy(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)])
            .unwrap();
        let r = resample_by_arclength(&sq, 1.0).unwrap();
        assert_eq!(r.len(), 5);
        for (a, b) in r.points().iter().zip(sq.points()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn resample_rejects_degenerate() {
        let line = Polyline::from_xy(&[(1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!(matches!(
            resample_by_arclength(&line, 0.5),
            Err(GeometryError::DegenerateInput)
        ));
        let single = Polyline::from_xy(&[(1.0, 1.0)]).unwrap();
        assert!(resample_by_arclength(&single, 0.5).is_err());
    }

    #[test]
    fn length_examples() {
        assert_eq!(Polyline::from_xy(&[(4.0, 2.0)]).unwrap().length(), 0.0);
        assert_eq!(Polyline::from_xy(&[(0.0, 0.0), (3.0, 4.0)]).unwrap().length(), 5.0);
    }

    #[test]
    fn polyline_rejects_bad_input() {
        assert!(matches!(Polyline::new(vec![]), Err(GeometryError::Empty)));
        assert!(matches!(
            Polyline::from_xy(&[(0.0, 0.0), (f64::NAN, 1.0)]),
            Err(GeometryError::NonFinite(1))
        ));
    }

    fn arb_point() -> impl Strategy<Value = Point2> {
        (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Point2::new(x, y))
    }

    proptest! {
        #[test]
        fn ego_round_trip(x in -100.0..100.0f64, y in -100.0..100.0f64, h in -10.0..10.0f64, p in arb_point()) {
            let pose = Pose2::new(x, y, h);
            let back = from_ego_frame(pose, to_ego_frame(pose, p));
            prop_assert!(close(back, p, 1e-9));
            let fwd = to_ego_frame(pose, from_ego_frame(pose, p));
            prop_assert!(close(fwd, p, 1e-9));
        }

        #[test]
        fn round_trip_fixed_pose(p in arb_point()) {
            let pose = Pose2::new(2.0, 3.0, 0.7);
            prop_assert!(close(from_ego_frame(pose, to_ego_frame(pose, p)), p, 1e-9));
        }

        #[test]
        fn normalize_idempotent_and_in_range(t in -1e4..1e4f64) {
            let n = normalize_angle(t);
            prop_assert!(n > -PI && n <= PI);
            prop_assert_eq!(normalize_angle(n), n);
            prop_assert!((n - t).sin().abs() < 1e-9 && ((n - t).cos() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn length_is_pairwise_sum(pts in prop::collection::vec(arb_point(), 10)) {
            let line = Polyline::new(pts.clone()).unwrap();
            let brute: f64 = (0..pts.len() - 1)
                .map(|i| ((pts[i + 1].x - pts[i].x).powi(2) + (pts[i + 1].y - pts[i].y).powi(2)).sqrt())
                .sum();
            prop_assert!((line.length() - brute).abs() < 1e-9);
        }

        #[test]
        fn resample_stays_on_curve(pts in prop::collection::vec(arb_point(), 2..8), spacing in 0.1..5.0f64) {
            let line = Polyline::new(pts).unwrap();
            prop_assume!(line.length() > 1e-6);
            let r = resample_by_arclength(&line, spacing).unwrap();
            prop_assert_eq!(r.first(), line.first());
            prop_assert_eq!(r.last(), line.last());
            let n = r.len();
            for (k, p) in r.points().iter().enumerate() {
                // Every sample sits on the input curve at arclength k·spacing
                // (the final sample at the total length).
                let s = if k == n - 1 { line.length() } else { k as f64 * spacing };
                prop_assert!(close(*p, line.point_at(s), 1e-9));
                let proj = line.point_at(line.project(*p));
                prop_assert!(close(proj, *p, 1e-6));
            }
            // Arclength of the final vertex equals the input length.
            let last_s = (n - 2) as f64 * spacing;
            prop_assert!(last_s <= line.length() + 1e-9);
            prop_assert!(line.length() - last_s <= spacing + 1e-9);
        }

        #[test]
        fn resample_preserves_length_on_straight_lines(len in 0.1..40.0f64, spacing in 0.05..3.0f64, h in -3.0..3.0f64) {
            let end = Point2::new(len, 0.0).rotate(h);
            let line = Polyline::new(vec![Point2::ORIGIN, end]).unwrap();
            let r = resample_by_arclength(&line, spacing).unwrap();
            prop_assert!((r.length() - line.length()).abs() < 1e-9);
        }
    }
}
