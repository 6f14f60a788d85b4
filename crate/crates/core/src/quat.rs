//! Unit quaternions in (w, x, y, z) order.

use std::ops::Mul;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Quat::new(q[0], q[1], q[2], q[3])
    }

    pub fn from_f32(q: [f32; 4]) -> Self {
        Quat::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_f32(self) -> [f32; 4] {
        [self.w as f32, self.x as f32, self.y as f32, self.z as f32]
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = norm3(axis);
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Rotation about the vertical (y) axis.
    pub fn from_yaw(angle: f64) -> Self {
        Quat::from_axis_angle([0.0, 1.0, 0.0], angle)
    }

    /// Smallest rotation taking unit direction `from` onto unit direction `to`.
    pub fn from_to(from: [f64; 3], to: [f64; 3]) -> Self {
        let from = normalize3(from);
        let to = normalize3(to);
        let d = dot3(from, to);
        if d < -1.0 + 1e-12 {
            // antiparallel: any perpendicular axis works
            let mut axis = cross3(from, [1.0, 0.0, 0.0]);
            if norm3(axis) < 1e-6 {
                axis = cross3(from, [0.0, 1.0, 0.0]);
            }
            return Quat::from_axis_angle(axis, std::f64::consts::PI);
        }
        let c = cross3(from, to);
        Quat::new(1.0 + d, c[0], c[1], c[2]).normalized()
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conj(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        // v + 2w(u x v) + 2u x (u x v)
        let u = [self.x, self.y, self.z];
        let t = cross3(u, v);
        let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
        let ut = cross3(u, t);
        [
            v[0] + self.w * t[0] + ut[0],
            v[1] + self.w * t[1] + ut[1],
            v[2] + self.w * t[2] + ut[2],
        ]
    }

    /// Rotation angle of `self⁻¹ ∘ other`, in [0, π].
    pub fn angle_to(self, other: Quat) -> f64 {
        let r = self.conj() * other;
        2.0 * norm3([r.x, r.y, r.z]).atan2(r.w.abs())
    }

    /// Spherical interpolation along the shortest arc.
    pub fn slerp(self, other: Quat, t: f64) -> Quat {
        let mut b = other;
        let mut d = self.dot(b);
        if d < 0.0 {
            b = b.neg();
            d = -d;
        }
        if d > 1.0 - 1e-12 {
            let q = Quat::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            );
            return q.normalized();
        }
        let theta = d.min(1.0).acos();
        let s = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / s;
        let wb = (t * theta).sin() / s;
        Quat::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
        .normalized()
    }
}

impl Quat {
    /// Rotation whose columns are the images of the x, y and z axes.
    pub fn from_basis(x: [f64; 3], y: [f64; 3], z: [f64; 3]) -> Quat {
        let (m00, m11, m22) = (x[0], y[1], z[2]);
        let tr = m00 + m11 + m22;
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(0.25 * s, (y[2] - z[1]) / s, (z[0] - x[2]) / s, (x[1] - y[0]) / s)
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            Quat::new((y[2] - z[1]) / s, 0.25 * s, (y[0] + x[1]) / s, (z[0] + x[2]) / s)
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            Quat::new((z[0] - x[2]) / s, (y[0] + x[1]) / s, 0.25 * s, (z[1] + y[2]) / s)
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            Quat::new((x[1] - y[0]) / s, (z[0] + x[2]) / s, (z[1] + y[2]) / s, 0.25 * s)
        };
        q.normalized()
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize3(a: [f64; 3]) -> [f64; 3] {
    let n = norm3(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotate_matches_sandwich_product() {
        let q = Quat::from_axis_angle([0.3, -1.0, 0.5], 1.1);
        let v = [0.2, 0.7, -1.3];
        let p = q * Quat::new(0.0, v[0], v[1], v[2]) * q.conj();
        let r = q.rotate(v);
        assert!((p.x - r[0]).abs() < 1e-12);
        assert!((p.y - r[1]).abs() < 1e-12);
        assert!((p.z - r[2]).abs() < 1e-12);
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        let a = Quat::from_yaw(0.2);
        let b = Quat::from_yaw(0.4).neg();
        let m = a.slerp(b, 0.5);
        assert!(m.angle_to(Quat::from_yaw(0.3)) < 1e-9);
    }

    #[test]
    fn basis_round_trip() {
        let q = Quat::from_axis_angle([0.2, 1.0, -0.4], 2.5);
        let b = Quat::from_basis(q.rotate([1.0, 0.0, 0.0]), q.rotate([0.0, 1.0, 0.0]), q.rotate([0.0, 0.0, 1.0]));
        assert!(q.angle_to(b) < 1e-9);
        for angle in [0.0, 3.0, -3.1] {
            let q = Quat::from_axis_angle([1.0, 0.1, 0.0], angle);
            let b = Quat::from_basis(q.rotate([1.0, 0.0, 0.0]), q.rotate([0.0, 1.0, 0.0]), q.rotate([0.0, 0.0, 1.0]));
            assert!(q.angle_to(b) < 1e-9);
        }
    }

    #[test]
    fn from_to_maps_direction() {
        let q = Quat::from_to([0.0, -1.0, 0.0], [0.3, -0.8, 0.1]);
        let r = q.rotate([0.0, -1.0, 0.0]);
        let t = normalize3([0.3, -0.8, 0.1]);
        for i in 0..3 {
            assert!((r[i] - t[i]).abs() < 1e-12);
        }
        let q = Quat::from_to([0.0, 1.0, 0.0], [0.0, -1.0, 0.0]);
        assert!((q.rotate([0.0, 1.0, 0.0])[1] + 1.0).abs() < 1e-12);
    }
}
