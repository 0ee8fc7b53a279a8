//! Small rigid-body geometry helpers shared by every module.
//!
//! Orientation is always ZYX Euler (roll about x, then pitch about y, then yaw
//! about z, composed as `Rz(yaw) * Ry(pitch) * Rx(roll)`).

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.8;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

pub fn rotation_from_rpy(rpy: &Vec3) -> Mat3 {
    Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z).into_inner()
}

pub fn rpy_from_rotation(r: &Mat3) -> Vec3 {
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(*r).euler_angles();
    Vec3::new(roll, pitch, yaw)
}

pub fn yaw_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation exponential map for a rotation vector.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    Rotation3::new(*w).into_inner()
}

/// Per-component wrapped difference `a - b` of two Euler triples.
pub fn rpy_error(a: &Vec3, b: &Vec3) -> Vec3 {
    Vec3::new(
        wrap_angle(a.x - b.x),
        wrap_angle(a.y - b.y),
        wrap_angle(a.z - b.z),
    )
}

/// CoM pose: world position and ZYX Euler orientation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub pos: Vec3,
    pub rpy: Vec3,
}

impl Pose {
    pub fn new(pos: Vec3, rpy: Vec3) -> Self {
        Self { pos, rpy }
    }

    pub fn rotation(&self) -> Mat3 {
        rotation_from_rpy(&self.rpy)
    }

    pub fn body_to_world(&self, p_body: &Vec3) -> Vec3 {
        self.pos + self.rotation() * p_body
    }

    pub fn world_to_body(&self, p_world: &Vec3) -> Vec3 {
        self.rotation().transpose() * (p_world - self.pos)
    }

    /// Rotation from the body frame into the yaw-aligned robot frame
    /// (roll and pitch only).
    pub fn tilt(&self) -> Mat3 {
        rotation_from_rpy(&Vec3::new(self.rpy.x, self.rpy.y, 0.0))
    }
}
