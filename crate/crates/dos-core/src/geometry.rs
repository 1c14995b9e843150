//! Ellipse geometry for occupancy sets.
//!
//! An occupancy set is an ellipse described by its center, full axis
//! lengths and orientation. Everything here is exact double-precision
//! math on immutable values: Mahalanobis distance, containment, area,
//! covariance contours, rigid frame transforms, and the closest-point
//! Euclidean distance used by the planner.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("ellipse axis lengths must be positive and finite, got major={major}, minor={minor}")]
    DegenerateAxis { major: f64, minor: f64 },
    #[error("invalid covariance: {reason}")]
    InvalidCovariance { reason: String },
}

/// A point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn add(self, other: Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        self.sub(other).norm()
    }

    /// Rotate counterclockwise by `angle` radians about the origin.
    pub fn rotated(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Wrap an orientation angle into `[0, pi)`. Ellipse orientation has
/// period pi, so this is the canonical representative.
pub fn wrap_orientation(theta: f64) -> f64 {
    let mut r = theta.rem_euclid(PI);
    if r >= PI {
        r -= PI;
    }
    r
}

/// Wrap a heading into `(-pi, pi]`.
pub fn wrap_heading(heading: f64) -> f64 {
    let mut r = heading.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// A rigid agent frame: position of the origin and heading of the +x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Point2, heading: f64) -> Self {
        Pose {
            position,
            heading: wrap_heading(heading),
        }
    }
}

/// Direction of a rigid frame transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameDirection {
    /// Interpret the value as agent-frame and map it into the world.
    ToWorld,
    /// Interpret the value as world-frame and map it into the agent frame.
    ToAgent,
}

/// One occupancy set at one timestep: an ellipse with full axis lengths
/// `major_len >= minor_len` and orientation `theta` in `[0, pi)`.
///
/// Axis lengths are full diameters; the semi-axes are half of them, so
/// the area is `(pi/4) * major_len * minor_len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSet {
    center: Point2,
    major_len: f64,
    minor_len: f64,
    theta: f64,
}

impl EllipseSet {
    /// Build an ellipse, canonicalizing so `major_len >= minor_len` and
    /// `theta` lies in `[0, pi)`. Swapping the axes rotates theta by pi/2.
    pub fn new(
        center: Point2,
        major_len: f64,
        minor_len: f64,
        theta: f64,
    ) -> Result<Self, GeometryError> {
        if !(major_len > 0.0 && minor_len > 0.0)
            || !major_len.is_finite()
            || !minor_len.is_finite()
            || !theta.is_finite()
            || !center.is_finite()
        {
            return Err(GeometryError::DegenerateAxis {
                major: major_len,
                minor: minor_len,
            });
        }
        let (l, w, th) = if minor_len > major_len {
            (minor_len, major_len, theta + FRAC_PI_2)
        } else {
            (major_len, minor_len, theta)
        };
        Ok(EllipseSet {
            center,
            major_len: l,
            minor_len: w,
            theta: wrap_orientation(th),
        })
    }

    /// A circle of the given radius (full axes `2 * radius`, theta 0).
    pub fn circle(center: Point2, radius: f64) -> Result<Self, GeometryError> {
        EllipseSet::new(center, 2.0 * radius, 2.0 * radius, 0.0)
    }

    pub fn center(&self) -> Point2 {
        self.center
    }

    pub fn major_len(&self) -> f64 {
        self.major_len
    }

    pub fn minor_len(&self) -> f64 {
        self.minor_len
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Semi-axes `(a, b)` with `a >= b`.
    pub fn semi_axes(&self) -> (f64, f64) {
        (0.5 * self.major_len, 0.5 * self.minor_len)
    }

    /// Mahalanobis distance of `p` from the set: 1 exactly on the boundary,
    /// < 1 inside, > 1 outside.
    pub fn mahalanobis(&self, p: Point2) -> f64 {
        let (a, b) = self.semi_axes();
        let d = p.sub(self.center);
        let (s, c) = self.theta.sin_cos();
        let dx = d.x * c + d.y * s;
        let dy = -d.x * s + d.y * c;
        ((dx / a).powi(2) + (dy / b).powi(2)).sqrt()
    }

    /// Whether `p` lies in the set; the boundary counts as inside.
    pub fn contains(&self, p: Point2) -> bool {
        self.mahalanobis(p) <= 1.0
    }

    /// Area in square meters: `(pi/4) * major_len * minor_len`.
    pub fn area(&self) -> f64 {
        (PI / 4.0) * self.major_len * self.minor_len
    }

    /// The covariance whose unit Mahalanobis contour is this ellipse:
    /// `R(theta) diag(a^2, b^2) R(theta)^T` with semi-axes `a`, `b`.
    pub fn to_covariance(&self) -> [[f64; 2]; 2] {
        let (a, b) = self.semi_axes();
        let (s, c) = self.theta.sin_cos();
        let (va, vb) = (a * a, b * b);
        let m00 = va * c * c + vb * s * s;
        let m01 = (va - vb) * c * s;
        let m11 = va * s * s + vb * c * c;
        [[m00, m01], [m01, m11]]
    }

    /// The `z`-sigma contour of a bivariate Gaussian: semi-axes are
    /// `z * sqrt(eigenvalue)` along the covariance eigenvectors.
    pub fn from_gaussian_contour(
        mean: Point2,
        cov: [[f64; 2]; 2],
        z: f64,
    ) -> Result<Self, GeometryError> {
        let (p, q0, q1, r) = (cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
        let scale = p.abs().max(r.abs()).max(1.0);
        if !(p.is_finite() && q0.is_finite() && q1.is_finite() && r.is_finite()) {
            return Err(GeometryError::InvalidCovariance {
                reason: "non-finite entries".into(),
            });
        }
        if (q0 - q1).abs() > 1e-9 * scale {
            return Err(GeometryError::InvalidCovariance {
                reason: format!("not symmetric: {q0} vs {q1}"),
            });
        }
        if !(z > 0.0) || !z.is_finite() {
            return Err(GeometryError::InvalidCovariance {
                reason: format!("contour scale must be positive, got {z}"),
            });
        }
        let q = 0.5 * (q0 + q1);
        let half_tr = 0.5 * (p + r);
        let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
        let lam1 = half_tr + disc;
        let lam2 = half_tr - disc;
        if !(lam2 > 0.0) {
            return Err(GeometryError::InvalidCovariance {
                reason: format!("not positive-definite: eigenvalues {lam1}, {lam2}"),
            });
        }
        let theta = if q.abs() > 1e-15 * scale {
            wrap_orientation((lam1 - p).atan2(q))
        } else if p >= r {
            0.0
        } else {
            FRAC_PI_2
        };
        EllipseSet::new(mean, 2.0 * z * lam1.sqrt(), 2.0 * z * lam2.sqrt(), theta)
    }

    /// Rigidly map the set between world and agent frames. Axis lengths
    /// are unchanged; center and orientation move with the pose.
    pub fn transform(&self, pose: &Pose, direction: FrameDirection) -> EllipseSet {
        let (center, theta) = match direction {
            FrameDirection::ToWorld => (
                pose.position.add(self.center.rotated(pose.heading)),
                self.theta + pose.heading,
            ),
            FrameDirection::ToAgent => (
                self.center.sub(pose.position).rotated(-pose.heading),
                self.theta - pose.heading,
            ),
        };
        EllipseSet {
            center,
            major_len: self.major_len,
            minor_len: self.minor_len,
            theta: wrap_orientation(theta),
        }
    }

    /// The boundary point at parameter `phi`:
    /// `center + R(theta) * (a cos phi, b sin phi)`.
    pub fn boundary_point(&self, phi: f64) -> Point2 {
        let (a, b) = self.semi_axes();
        let local = Point2::new(a * phi.cos(), b * phi.sin());
        self.center.add(local.rotated(self.theta))
    }

    /// Exact Euclidean distance from `p` to the set: 0 if contained,
    /// otherwise the closest-point distance on the boundary, found by
    /// bisection on the closest-point equation.
    pub fn euclidean_distance(&self, p: Point2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        let (a, b) = self.semi_axes();
        let d = p.sub(self.center).rotated(-self.theta);
        // Fold into the first quadrant; the closest point shares it.
        let x = d.x.abs();
        let y = d.y.abs();
        let t = closest_point_param(a, b, x, y);
        (x - a * t.cos()).hypot(y - b * t.sin())
    }
}

// Derivative of the squared distance from (x, y) to (a cos t, b sin t).
// On [0, pi/2] with x, y >= 0 it runs from <= 0 to >= 0, so the squared
// distance has its minimum at the sign change.
fn closest_point_deriv(a: f64, b: f64, x: f64, y: f64, t: f64) -> f64 {
    let (s, c) = t.sin_cos();
    2.0 * a * s * (x - a * c) - 2.0 * b * c * (y - b * s)
}

fn closest_point_param(a: f64, b: f64, x: f64, y: f64) -> f64 {
    let mut lo = 0.0_f64;
    let mut hi = FRAC_PI_2;
    let f_lo = closest_point_deriv(a, b, x, y, lo);
    if f_lo >= 0.0 {
        // Minimum at t = 0 (point on or below the major axis).
        return 0.0;
    }
    // Bisection converges unconditionally; ~50 halvings put the parameter
    // well below the 1e-6 m distance tolerance even at high aspect ratio.
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if closest_point_deriv(a, b, x, y, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}
