//! Point configurations: size measure, closed-form rigid alignment and
//! distances between corresponding points.

use std::f64::consts::PI;
use std::ops::{Add, Deref, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// An ordered configuration of at least three finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfig(Vec<Point>);

impl PointConfig {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Validation(format!(
                "point configuration needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite point coordinate".into()));
        }
        Ok(PointConfig(points))
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        PointConfig::new(xy.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn into_points(self) -> Vec<Point> {
        self.0
    }
}

impl Deref for PointConfig {
    type Target = [Point];
    fn deref(&self) -> &[Point] {
        &self.0
    }
}

/// Rotation about the origin followed by translation. No reflection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Radians in (-pi, pi].
    pub rotation: f64,
    pub translation: Point,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: 0.0,
        translation: Point::ORIGIN,
    };

    pub fn new(rotation: f64, translation: Point) -> Self {
        RigidTransform {
            rotation: wrap_angle(rotation),
            translation,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        p.rotated(self.rotation) + self.translation
    }
}

/// Maps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn barycenter(points: &[Point]) -> Point {
    if points.is_empty() {
        return Point::ORIGIN;
    }
    let n = points.len() as f64;
    let sum = points.iter().fold(Point::ORIGIN, |acc, &p| acc + p);
    Point::new(sum.x / n, sum.y / n)
}

/// Square root of the summed squared distances to the barycenter (centroid size).
pub fn spread(points: &[Point]) -> f64 {
    let c = barycenter(points);
    points.iter().map(|&p| (p - c).norm_sq()).sum::<f64>().sqrt()
}

pub fn centered(points: &[Point]) -> Vec<Point> {
    let c = barycenter(points);
    points.iter().map(|&p| p - c).collect()
}

fn check_lengths(a: &[Point], b: &[Point]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty point configuration".into()));
    }
    Ok(())
}

/// Square root of the mean squared distance between corresponding points.
pub fn smsd(a: &[Point], b: &[Point]) -> Result<f64> {
    check_lengths(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(&p, &q)| (p - q).norm_sq()).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Optimal rotation angle taking centered `src` onto centered `dst`.
/// Returns 0 when the cross-covariance vanishes.
pub(crate) fn optimal_rotation(src_centered: &[Point], dst_centered: &[Point]) -> f64 {
    let (mut sc, mut sd) = (0.0, 0.0);
    for (&a, &b) in src_centered.iter().zip(dst_centered) {
        sc += a.cross(b);
        sd += a.dot(b);
    }
    if sc == 0.0 && sd == 0.0 {
        0.0
    } else {
        wrap_angle(sc.atan2(sd))
    }
}

/// Rotation and translation of `src` minimizing the SMSD to `dst`, together
/// with the attained SMSD.
pub fn rigid_align(src: &[Point], dst: &[Point]) -> Result<(RigidTransform, f64)> {
    check_lengths(src, dst)?;
    let cs = barycenter(src);
    let cd = barycenter(dst);
    let a: Vec<Point> = src.iter().map(|&p| p - cs).collect();
    let b: Vec<Point> = dst.iter().map(|&p| p - cd).collect();
    let rotation = optimal_rotation(&a, &b);
    let transform = RigidTransform::new(rotation, cd - cs.rotated(rotation));
    let moved: Vec<Point> = src.iter().map(|&p| transform.apply(p)).collect();
    let d = smsd(&moved, dst)?;
    Ok((transform, d))
}

/// Maps each point p to R(rotation)·(scale·p) + translation.
pub fn apply_similarity(points: &[Point], scale: f64, t: &RigidTransform) -> Result<Vec<Point>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    Ok(points.iter().map(|&p| t.apply(p * scale)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(xy: &[(f64, f64)]) -> Vec<Point> {
        xy.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn barycenter_examples() {
        let c = barycenter(&pts(&[(0.0, 0.0), (2.0, 0.0), (0.0, 2.0)]));
        assert_abs_diff_eq!(c.x, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.y, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(barycenter(&pts(&[(1.0, 1.0); 3])), Point::new(1.0, 1.0));
        let base = pts(&[(0.3, 1.0), (2.0, -4.0), (7.0, 2.5)]);
        let moved: Vec<Point> = base.iter().map(|&p| p + Point::new(5.0, -3.0)).collect();
        let (b0, b1) = (barycenter(&base), barycenter(&moved));
        assert_abs_diff_eq!(b1.x - b0.x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b1.y - b0.y, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn spread_examples() {
        assert_abs_diff_eq!(spread(&pts(&[(0.0, 0.0), (1.0, 0.0)])), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            spread(&pts(&[(0.0, 0.0), (2.0, 0.0), (0.0, 2.0)])),
            (16.0f64 / 3.0).sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn smsd_examples() {
        let a = pts(&[(0.0, 0.0), (1.0, 2.0), (3.0, -1.0)]);
        assert_eq!(smsd(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Point> = a.iter().map(|&p| p + Point::new(1.0, 0.0)).collect();
        assert_abs_diff_eq!(smsd(&a, &shifted).unwrap(), 1.0, epsilon = 1e-15);
        let d = smsd(&pts(&[(0.0, 0.0), (0.0, 0.0)]), &pts(&[(3.0, 4.0), (0.0, 0.0)])).unwrap();
        assert_abs_diff_eq!(d, 12.5f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(smsd(&a, &a[..2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn rigid_align_recovers_exact_motion() {
        let src = pts(&[(0.0, 0.0), (3.0, 1.0), (-1.0, 2.0), (4.0, -2.5), (1.5, 1.5)]);
        let truth = RigidTransform::new(30f64.to_radians(), Point::new(4.0, -1.0));
        let dst: Vec<Point> = src.iter().map(|&p| truth.apply(p)).collect();
        let (t, d) = rigid_align(&src, &dst).unwrap();
        assert_abs_diff_eq!(t.rotation, truth.rotation, epsilon = 1e-12);
        assert_abs_diff_eq!(t.translation.x, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.translation.y, -1.0, epsilon = 1e-12);
        assert!(d <= 1e-9);
    }

    #[test]
    fn rigid_align_identity_and_degenerate() {
        let src = pts(&[(0.0, 1.0), (2.0, 0.0), (1.0, 1.0)]);
        let (t, d) = rigid_align(&src, &src).unwrap();
        assert_abs_diff_eq!(t.rotation, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.translation.norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);

        let a = pts(&[(1.0, 1.0); 3]);
        let b = pts(&[(4.0, -2.0); 3]);
        let (t, d) = rigid_align(&a, &b).unwrap();
        assert_eq!(t.rotation, 0.0);
        assert_eq!(t.translation, Point::new(3.0, -3.0));
        assert_eq!(d, 0.0);
        assert!(rigid_align(&a, &b[..2]).is_err());
    }

    #[test]
    fn rotation_range_is_half_open() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        // Half-turn alignment lands on +pi, not -pi.
        let src = pts(&[(1.0, 0.0), (-1.0, 0.0), (0.0, 0.5), (0.0, -0.5)]);
        let dst: Vec<Point> = src.iter().map(|&p| p * -1.0).collect();
        let (t, _) = rigid_align(&src, &dst).unwrap();
        assert!(t.rotation > 0.0 && (t.rotation - PI).abs() < 1e-12);
    }

    #[test]
    fn similarity_examples() {
        let c = pts(&[(1.0, 0.0), (0.0, 2.0), (-3.0, 1.0)]);
        assert_eq!(apply_similarity(&c, 1.0, &RigidTransform::IDENTITY).unwrap(), c);
        assert_eq!(
            apply_similarity(&pts(&[(1.0, 0.0)]), 2.0, &RigidTransform::IDENTITY).unwrap(),
            pts(&[(2.0, 0.0)])
        );
        let twice = apply_similarity(
            &apply_similarity(&c, 1.3, &RigidTransform::IDENTITY).unwrap(),
            0.7,
            &RigidTransform::IDENTITY,
        )
        .unwrap();
        let once = apply_similarity(&c, 1.3 * 0.7, &RigidTransform::IDENTITY).unwrap();
        for (p, q) in twice.iter().zip(&once) {
            assert_abs_diff_eq!((*p - *q).norm(), 0.0, epsilon = 1e-14);
        }
        assert!(apply_similarity(&c, 0.0, &RigidTransform::IDENTITY).is_err());
    }

    #[test]
    fn point_config_invariants() {
        assert!(PointConfig::from_xy(&[(0.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(PointConfig::from_xy(&[(0.0, 0.0), (1.0, f64::NAN), (2.0, 0.0)]).is_err());
        let c = PointConfig::from_xy(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert_eq!(c.len(), 3);
    }
}
