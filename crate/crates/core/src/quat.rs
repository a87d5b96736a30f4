//! Scalar-first unit quaternions and small 3-vector helpers.
//!
//! Rotations are active: `q.rotate(v)` rotates `v` by `q`, and `a * b`
//! applies `b` first, then `a` (child-after-parent when composing a chain).

use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Returns `None` when the vector is too short to define a direction.
pub fn normalized(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12).then(|| scale(a, 1.0 / n))
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Axis of an elementary rotation, as named by animation channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let Some(a) = normalized(axis) else {
            return Self::IDENTITY;
        };
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, a[0] * s, a[1] * s, a[2] * s)
    }

    pub fn about(axis: Axis, angle: f64) -> Self {
        Self::from_axis_angle(axis.unit(), angle)
    }

    /// Composes elementary rotations in channel order: for `[(Z, a), (X, b)]`
    /// the result is `Rz(a) * Rx(b)`. Angles in degrees.
    pub fn from_euler_deg(channels: &[(Axis, f64)]) -> Self {
        channels.iter().fold(Self::IDENTITY, |acc, &(axis, deg)| {
            acc * Self::about(axis, deg.to_radians())
        })
    }

    /// Decomposes into `Rz(z) * Ry(y) * Rx(x)`, returning `(z, y, x)` in degrees.
    pub fn to_euler_zyx_deg(self) -> (f64, f64, f64) {
        let m = self.to_matrix();
        let sy = (-m[2][0]).clamp(-1.0, 1.0);
        let y = sy.asin();
        let (z, x) = if sy.abs() < 1.0 - 1e-9 {
            (m[1][0].atan2(m[0][0]), m[2][1].atan2(m[2][2]))
        } else {
            // Gimbal lock: fold everything into z.
            ((-m[0][1]).atan2(m[1][1]), 0.0)
        };
        (z.to_degrees(), y.to_degrees(), x.to_degrees())
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12) {
            return Err(Error::DegenerateQuaternion(n));
        }
        Ok(self.scale(1.0 / n))
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Inverse of a unit quaternion.
    pub fn inverse(self) -> Self {
        self.conjugate().scale(1.0 / self.norm_sqr())
    }

    pub fn dot(self, o: Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Computes `q v q*`. For non-unit `q` the result is scaled by `|q|²`.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = [self.x, self.y, self.z];
        let w = self.w;
        let uv = dot(u, v);
        let uu = dot(u, u);
        let c = cross(u, v);
        [
            (w * w - uu) * v[0] + 2.0 * uv * u[0] + 2.0 * w * c[0],
            (w * w - uu) * v[1] + 2.0 * uv * u[1] + 2.0 * w * c[1],
            (w * w - uu) * v[2] + 2.0 * uv * u[2] + 2.0 * w * c[2],
        ]
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_matrix(self) -> Mat3 {
        let q = self.scale(1.0 / self.norm());
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Shortest-arc rotation taking direction `from` onto direction `to`.
    pub fn between(from: Vec3, to: Vec3) -> Self {
        let (Some(a), Some(b)) = (normalized(from), normalized(to)) else {
            return Self::IDENTITY;
        };
        let d = dot(a, b).clamp(-1.0, 1.0);
        if d > 1.0 - 1e-15 {
            return Self::IDENTITY;
        }
        if d < -1.0 + 1e-12 {
            // Antiparallel: any perpendicular axis works.
            let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            return Self::from_axis_angle(cross(a, helper), std::f64::consts::PI);
        }
        Self::from_axis_angle(cross(a, b), d.acos())
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(self, other: Self, t: f64) -> Self {
        let mut b = other;
        let mut d = self.dot(b);
        if d < 0.0 {
            b = -b;
            d = -d;
        }
        if d > 1.0 - 1e-9 {
            let q = Self::new(
                self.w + (b.w - self.w) * t,
                self.x + (b.x - self.x) * t,
                self.y + (b.y - self.y) * t,
                self.z + (b.z - self.z) * t,
            );
            return q.scale(1.0 / q.norm());
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / s;
        let wb = (t * theta).sin() / s;
        Self::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Flips signs so that consecutive quaternions lie in the same hemisphere.
pub fn hemisphere_align(track: &[Quaternion]) -> Vec<Quaternion> {
    let mut out = Vec::with_capacity(track.len());
    for &q in track {
        let q = match out.last() {
            Some(&prev) if q.dot(prev) < 0.0 => -q,
            _ => q,
        };
        out.push(q);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Quaternion, b: Quaternion, tol: f64) -> bool {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn normalize_cases() {
        let q = Quaternion::new(2.0, 0.0, 0.0, 0.0).normalize().unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
        assert_eq!(
            Quaternion::IDENTITY.normalize().unwrap(),
            Quaternion::IDENTITY
        );
        assert!(matches!(
            Quaternion::new(0.0, 0.0, 0.0, 1e-15).normalize(),
            Err(Error::DegenerateQuaternion(_))
        ));
    }

    #[test]
    fn hemisphere_sign_flip() {
        let out = hemisphere_align(&[Quaternion::IDENTITY, -Quaternion::IDENTITY]);
        assert_eq!(out, vec![Quaternion::IDENTITY, Quaternion::IDENTITY]);
        let c = Quaternion::about(Axis::Y, 0.3);
        assert_eq!(hemisphere_align(&[c, c, c]), vec![c, c, c]);
    }

    #[test]
    fn rotate_matches_matrix() {
        let q = Quaternion::new(0.3, -0.5, 0.8, 0.1).normalize().unwrap();
        let v = [0.2, -1.3, 0.7];
        let a = q.rotate(v);
        let b = mat_vec(&q.to_matrix(), v);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn z_rotation_quarter_turn() {
        let q = Quaternion::from_euler_deg(&[(Axis::Z, 90.0)]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(q, Quaternion::new(h, 0.0, 0.0, h), 1e-12));
        let v = q.rotate([1.0, 0.0, 0.0]);
        assert!((v[1] - 1.0).abs() < 1e-12 && v[0].abs() < 1e-12);
    }

    #[test]
    fn euler_zyx_round_trip() {
        for &(z, y, x) in &[(10.0, 20.0, 30.0), (-170.0, 45.0, 91.0), (0.0, -80.0, 5.0)] {
            let q = Quaternion::from_euler_deg(&[(Axis::Z, z), (Axis::Y, y), (Axis::X, x)]);
            let (z2, y2, x2) = q.to_euler_zyx_deg();
            let q2 = Quaternion::from_euler_deg(&[(Axis::Z, z2), (Axis::Y, y2), (Axis::X, x2)]);
            assert!(q.dot(q2).abs() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn between_and_slerp() {
        let q = Quaternion::between([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let v = q.rotate([1.0, 0.0, 0.0]);
        assert!((v[1] - 1.0).abs() < 1e-12);
        let a = Quaternion::IDENTITY;
        let b = Quaternion::about(Axis::X, FRAC_PI_2);
        let m = a.slerp(b, 0.5);
        assert!(close(m, Quaternion::about(Axis::X, FRAC_PI_2 / 2.0), 1e-12));
        assert!(close(a.slerp(b, 0.0), a, 1e-12));
        assert!(close(a.slerp(b, 1.0), b, 1e-12));
    }
}
